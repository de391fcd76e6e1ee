//! Motion statistics over precomputed flows and hardest-subset selection.

use std::cmp::Ordering;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor_io::{read_flo, FlowField};

/// Fraction of pixels whose flow magnitude is examined by the default
/// sufficiency criterion.
pub const DEFAULT_TOP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionStats {
    pub mean_magnitude: f64,
    /// Smallest magnitude among the largest `p` fraction of pixel flows:
    /// the `ceil(p * N)`-th largest magnitude.
    pub top_p_min_magnitude: f64,
    pub p: f64,
}

fn check_fraction(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("fraction p = {p} outside (0, 1]")))
    }
}

/// Rank (1-based, counted from the largest) used for the top-`p` minimum.
pub fn top_fraction_rank(p: f64, n: usize) -> usize {
    // the epsilon absorbs representation error such as 0.07 * 100
    (((p * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

pub fn motion_stats_from_magnitudes(magnitudes: &[f64], p: f64) -> Result<MotionStats> {
    check_fraction(p)?;
    if magnitudes.is_empty() {
        return Err(Error::EmptyFlow);
    }
    let n = magnitudes.len();
    let rank = top_fraction_rank(p, n);
    let mut m = magnitudes.to_vec();
    let (_, kth, _) = m.select_nth_unstable_by(rank - 1, |a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let top_p_min_magnitude = *kth;
    Ok(MotionStats { mean_magnitude: magnitudes.iter().sum::<f64>() / n as f64, top_p_min_magnitude, p })
}

pub fn motion_stats(flow: &FlowField, p: f64) -> Result<MotionStats> {
    motion_stats_from_magnitudes(&flow.magnitudes(), p)
}

/// True when at least a `p` fraction of pixels move by `threshold` pixels
/// or more.
pub fn sufficiency(flow: &FlowField, p: f64, threshold: f64) -> Result<bool> {
    Ok(motion_stats(flow, p)?.top_p_min_magnitude >= threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurationMode {
    /// Keep the `ceil(n / 2)` triplets with the largest top-`p` minimum.
    RankHalf,
    /// Keep every triplet passing [`sufficiency`].
    Threshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub flows: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationRow {
    pub id: String,
    pub mean_magnitude: f64,
    pub top_p_min: f64,
    pub kept: bool,
    /// 1-based position when sorted by difficulty, hardest first.
    pub rank: usize,
}

/// Reads a tab-separated manifest `id<TAB>flow[<TAB>flow2]`. Relative flow
/// paths are resolved against the manifest's directory. Blank lines and
/// lines starting with `#` are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = vec![];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Malformed(format!("manifest line {}: expected 2 or 3 tab-separated fields", lineno + 1)));
        }
        let flows = fields[1..]
            .iter()
            .map(|f| {
                let p = Path::new(f);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            })
            .collect();
        entries.push(ManifestEntry { id: fields[0].to_string(), flows });
    }
    Ok(entries)
}

/// Statistic of one triplet: with two flows, the one whose top-`p` minimum
/// is larger governs.
pub fn triplet_stats(flows: &[FlowField], p: f64) -> Result<MotionStats> {
    let mut best: Option<MotionStats> = None;
    for f in flows {
        let s = motion_stats(f, p)?;
        if best.is_none_or(|b| s.top_p_min_magnitude > b.top_p_min_magnitude) {
            best = Some(s);
        }
    }
    best.ok_or(Error::EmptyFlow)
}

/// Ranks triplets hardest first and marks the kept ones. Rows come back
/// sorted by id.
pub fn select(stats: Vec<(String, MotionStats)>, mode: CurationMode, threshold: f64) -> Vec<CurationRow> {
    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| {
        stats[b].1.top_p_min_magnitude
            .partial_cmp(&stats[a].1.top_p_min_magnitude)
            .unwrap_or(Ordering::Equal)
            .then_with(|| stats[a].0.cmp(&stats[b].0))
    });
    let keep_n = stats.len().div_ceil(2);
    let mut rows: Vec<CurationRow> = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| {
            let (id, s) = &stats[i];
            let kept = match mode {
                CurationMode::RankHalf => pos < keep_n,
                CurationMode::Threshold => s.top_p_min_magnitude >= threshold,
            };
            CurationRow { id: id.clone(), mean_magnitude: s.mean_magnitude, top_p_min: s.top_p_min_magnitude, kept, rank: pos + 1 }
        })
        .collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id).then(a.rank.cmp(&b.rank)));
    rows
}

/// Loads every triplet's flows (in parallel) and curates them.
pub fn curate(entries: &[ManifestEntry], p: f64, mode: CurationMode, threshold: f64) -> Result<Vec<CurationRow>> {
    check_fraction(p)?;
    for e in entries {
        if let Some(missing) = e.flows.iter().find(|f| !f.is_file()) {
            return Err(Error::MissingFlowFile(missing.clone()));
        }
    }
    let stats: Vec<(String, MotionStats)> = entries
        .par_iter()
        .map(|e| {
            let flows = e.flows.iter().map(read_flo).collect::<Result<Vec<_>>>()?;
            Ok((e.id.clone(), triplet_stats(&flows, p)?))
        })
        .collect::<Result<_>>()?;
    Ok(select(stats, mode, threshold))
}

/// Empirical CDF points `(value, fraction of values <= value)`, ascending.
pub fn cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = v.len() as f64;
    v.iter().enumerate().map(|(i, &x)| (x, (i + 1) as f64 / n)).collect()
}

pub fn write_curation_csv<W: Write>(rows: &[CurationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Malformed(format!("csv write: {e}"));
    w.write_record(["id", "mean_magnitude", "top_p_min", "kept"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            crate::format_g6(r.mean_magnitude),
            crate::format_g6(r.top_p_min),
            (r.kept as u8).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// CDF points of both statistics, for external plotting.
pub fn write_cdf_csv<W: Write>(rows: &[CurationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Malformed(format!("csv write: {e}"));
    w.write_record(["statistic", "value", "cumulative_fraction"]).map_err(io)?;
    let means: Vec<f64> = rows.iter().map(|r| r.mean_magnitude).collect();
    let tops: Vec<f64> = rows.iter().map(|r| r.top_p_min).collect();
    for (name, vals) in [("mean_magnitude", means), ("top_p_min", tops)] {
        for (v, f) in cdf_points(&vals) {
            w.write_record([name.to_string(), crate::format_g6(v), crate::format_g6(f)]).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Kept triplets, hardest first, in manifest format.
pub fn write_subset_manifest<W: Write>(rows: &[CurationRow], entries: &[ManifestEntry], mut out: W) -> Result<()> {
    let mut kept: Vec<&CurationRow> = rows.iter().filter(|r| r.kept).collect();
    kept.sort_by_key(|r| r.rank);
    for r in kept {
        let e = entries.iter().find(|e| e.id == r.id).expect("row ids come from entries");
        let paths: Vec<String> = e.flows.iter().map(|p| p.display().to_string()).collect();
        writeln!(out, "{}\t{}", e.id, paths.join("\t")).map_err(|e| Error::io("<manifest>", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(top: f64) -> MotionStats {
        MotionStats { mean_magnitude: top / 2.0, top_p_min_magnitude: top, p: 0.05 }
    }

    #[test]
    fn constant_flow_stats() {
        let f = FlowField::constant(10, 10, 3.0, 4.0).unwrap();
        for p in [0.01, 0.05, 0.5, 1.0] {
            let s = motion_stats(&f, p).unwrap();
            assert!((s.mean_magnitude - 5.0).abs() < 1e-12);
            assert!((s.top_p_min_magnitude - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hundred_magnitudes_fifth_largest() {
        let m: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        assert_eq!(motion_stats_from_magnitudes(&m, 0.05).unwrap().top_p_min_magnitude, 96.0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(motion_stats_from_magnitudes(&[], 0.5), Err(Error::EmptyFlow)));
        assert!(motion_stats_from_magnitudes(&[1.0], 0.0).is_err());
        assert!(motion_stats_from_magnitudes(&[1.0], 1.5).is_err());
    }

    #[test]
    fn sufficiency_cases() {
        let f = FlowField::constant(4, 4, 10.0, 0.0).unwrap();
        assert!(sufficiency(&f, 0.05, 8.0).unwrap());
        let z = FlowField::zeros(4, 4).unwrap();
        assert!(!sufficiency(&z, 0.05, 1e-6).unwrap());
    }

    #[test]
    fn rank_half_keeps_hardest() {
        let rows = select(
            vec![("a".into(), stats(10.0)), ("b".into(), stats(20.0)), ("c".into(), stats(30.0)), ("d".into(), stats(40.0))],
            CurationMode::RankHalf,
            0.0,
        );
        let kept: Vec<_> = rows.iter().filter(|r| r.kept).map(|r| r.id.as_str()).collect();
        assert_eq!(kept, vec!["c", "d"]);
        assert_eq!(rows.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), vec!["a", "b", "c", "d"]);
        assert_eq!(rows[3].rank, 1);

        let one = select(vec![("x".into(), stats(1.0))], CurationMode::RankHalf, 0.0);
        assert!(one[0].kept);
    }

    #[test]
    fn threshold_mode() {
        let rows = select(vec![("a".into(), stats(149.0)), ("b".into(), stats(150.0))], CurationMode::Threshold, 150.0);
        assert!(!rows[0].kept && rows[1].kept);
    }

    #[test]
    fn cdf_is_monotone() {
        let pts = cdf_points(&[3.0, 1.0, 2.0, 2.0]);
        assert_eq!(pts, vec![(1.0, 0.25), (2.0, 0.5), (2.0, 0.75), (3.0, 1.0)]);
    }

    #[test]
    fn manifest_parsing_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.tsv");
        std::fs::write(&m, "# comment\na\tx.flo\nb\ty.flo\tz.flo\n\n").unwrap();
        let entries = read_manifest(&m).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[1].flows, vec![dir.path().join("y.flo"), dir.path().join("z.flo")]);
        assert!(matches!(curate(&entries, 0.05, CurationMode::RankHalf, 0.0), Err(Error::MissingFlowFile(_))));

        std::fs::write(&m, "only-one-field\n").unwrap();
        assert!(matches!(read_manifest(&m), Err(Error::Malformed(_))));
    }
}
