use std::io::Write;
use std::path::Path;

use super::config::ConfigFile;
use super::*;
use crate::curation::{curate, read_manifest, write_cdf_csv, write_curation_csv, write_subset_manifest, CurationMode};
use crate::error::{Error, Result};
use crate::flaw::difference_maps_at_scale;
use crate::format_g6;
use crate::matching::{match_with_selection, Selection, SparseFlow};
use crate::merge::{merge_pipeline, HeuristicWeights};
use crate::metrics::{endpoint_error, laplacian_loss, psnr, ssim, LAPLACIAN_LEVELS};
use crate::pipeline::{
    compare_reversal, compensate, midpoint, points_for, GroundTruth, PipelineConfig, DEFAULT_SCALE_EXPONENT, DEFAULT_T,
};
use crate::scenes::{exact_fixture, moving_square, moving_square_fixture, translation_scene, Corruption, Fixture, DEFAULT_SEED};
use crate::shift::{shift_to_t, Direction};
use crate::synthesis::{linear_fusion, synthesize};
use crate::flaw::DifferenceMapPair;
use crate::tensor_io::{
    read_flo, read_fmap, read_png, resize_flow, write_flo, write_fmap, write_heatmap_png, write_png, FeatureMap, FlowField,
    Image, Planar, ScalarMap,
};
use crate::warping::{backward_warp, forward_warp, Border};

/// Resolved global settings plus buffered output. Output is buffered so
/// commands can run inside the worker pool.
pub(super) struct Context {
    pub threads: usize,
    pub seed: u64,
    pub quiet: bool,
    pub file: ConfigFile,
    pub out: Vec<u8>,
    pub log: Vec<u8>,
}

impl Context {
    pub fn resolve(cli: &Cli, file: ConfigFile) -> Result<Self> {
        Ok(Self {
            threads: file.pick(cli.threads, "threads", 0)?,
            seed: file.pick(cli.seed, "seed", DEFAULT_SEED)?,
            quiet: cli.quiet || file.get("quiet")?.unwrap_or(false),
            file,
            out: vec![],
            log: vec![],
        })
    }

    fn note(&mut self, msg: impl AsRef<str>) {
        if !self.quiet {
            let _ = writeln!(self.log, "{}", msg.as_ref());
        }
    }

    fn pipeline_config(&self, a: &PipelineArgs) -> Result<(PipelineConfig, f64)> {
        let f = &self.file;
        let d = PipelineConfig::default();
        let merge = HeuristicWeights {
            radius: f.pick(a.radius, "radius", d.merge.radius)?,
            gain: f.pick(a.gain, "gain", d.merge.gain)?,
            bias: f.pick(a.bias, "bias", d.merge.bias)?,
            min_confidence: f.pick(a.min_confidence, "min_confidence", d.merge.min_confidence)?,
        };
        let cfg = PipelineConfig {
            scale_exponent: f.get("scale")?,
            tau: f.pick(a.tau, "tau", d.tau)?,
            temperature: f.pick(a.temperature, "temperature", d.temperature)?,
            min_match_confidence: merge.min_confidence,
            merge,
            selection: Selection::TopK,
        };
        Ok((cfg, f.pick(a.t, "t", DEFAULT_T)?))
    }

    /// Writes CSV rows to `path`, or to stdout.
    fn emit(&mut self, path: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut buf = vec![];
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let err = |e: csv::Error| Error::Malformed(format!("csv write: {e}"));
            w.write_record(header).map_err(err)?;
            for r in rows {
                w.write_record(r).map_err(err)?;
            }
            w.flush().map_err(|e| Error::io("<csv>", e))?;
        }
        match path {
            Some(p) => std::fs::write(p, buf).map_err(|e| Error::io(p, e)),
            None => {
                self.out.extend_from_slice(&buf);
                Ok(())
            }
        }
    }
}

pub(super) fn dispatch(cmd: &Command, mut ctx: Context) -> (Result<()>, Vec<u8>, Vec<u8>) {
    let r = match cmd {
        Command::Warp(a) => warp(a, &mut ctx),
        Command::Diffmap(a) => diffmap(a, &mut ctx),
        Command::Match(a) => do_match(a, &mut ctx),
        Command::Shift(a) => shift(a, &mut ctx),
        Command::Merge(a) => merge(a, &mut ctx),
        Command::Synthesize(a) => synth_frame(a, &mut ctx),
        Command::Evaluate(a) => evaluate(a, &mut ctx),
        Command::Curate(a) => curate_cmd(a, &mut ctx),
        Command::Synth(a) => synth_fixture(a, &mut ctx),
        Command::Run(a) => run_fixture(a, &mut ctx),
        Command::CompareReversal(a) => compare(a, &mut ctx),
    };
    (r, ctx.out, ctx.log)
}

fn g(v: f64) -> String {
    format_g6(v)
}

fn opt(v: Option<f64>) -> String {
    v.map(g).unwrap_or_default()
}

fn scalar_from_fmap(path: &Path) -> Result<(ScalarMap, u8)> {
    let m = read_fmap(path)?;
    if m.channels() != 1 {
        return Err(Error::Malformed(format!("{}: expected one channel, found {}", path.display(), m.channels())));
    }
    let scale = m.scale_exponent();
    Ok((ScalarMap::from_planes(m.planes().clone())?, scale))
}

fn scalar_to_fmap(map: &ScalarMap, scale: u8) -> FeatureMap {
    FeatureMap::new(map.planes().clone(), scale)
}

fn warp(a: &WarpArgs, ctx: &mut Context) -> Result<()> {
    let img = read_png(&a.input)?;
    let flow = read_flo(&a.flow)?;
    match a.mode {
        WarpMode::Backward => {
            let border = match a.border {
                BorderArg::Clamp => Border::Clamp,
                BorderArg::Zero => Border::Zero,
            };
            write_png(&backward_warp(&img, &flow, border)?, &a.out)?;
        }
        WarpMode::Forward => {
            let (out, weights) = forward_warp(&img, &flow)?;
            write_png(&out, &a.out)?;
            if let Some(p) = &a.weights {
                write_heatmap_png(&weights, p)?;
            }
        }
    }
    ctx.note(format!("wrote {}", a.out.display()));
    Ok(())
}

fn diffmap(a: &DiffmapArgs, ctx: &mut Context) -> Result<()> {
    let (i0, i1) = (read_png(&a.i0)?, read_png(&a.i1)?);
    let (ft0, ft1) = (read_flo(&a.ft0)?, read_flo(&a.ft1)?);
    let scale = ctx.file.pick(a.scale, "scale", DEFAULT_SCALE_EXPONENT)?;
    let tau = ctx.file.pick(a.tau, "tau", PipelineConfig::default().tau)?;
    let d = difference_maps_at_scale(&i0, &i1, &ft0, &ft1, tau, scale)?;
    write_fmap(&scalar_to_fmap(&d.d0, scale), &a.out_d0)?;
    write_fmap(&scalar_to_fmap(&d.d1, scale), &a.out_d1)?;
    if let Some(p) = &a.heatmap_d0 {
        write_heatmap_png(&d.d0, p)?;
    }
    if let Some(p) = &a.heatmap_d1 {
        write_heatmap_png(&d.d1, p)?;
    }
    ctx.note(format!("mean D0 {} mean D1 {}", g(d.d0.mean()), g(d.d1.mean())));
    Ok(())
}

fn do_match(a: &MatchArgs, ctx: &mut Context) -> Result<()> {
    let (a0, a1) = (read_fmap(&a.a0)?, read_fmap(&a.a1)?);
    let (d0, s0) = scalar_from_fmap(&a.d0)?;
    let (d1, _) = scalar_from_fmap(&a.d1)?;
    let cells = d0.values().len();
    let k = match (a.k, a.sparsity) {
        (Some(k), _) => k,
        (None, s) => points_for(ctx.file.pick(s, "sparsity", 0.125)?, cells)?,
    };
    let temperature = ctx.file.pick(a.temperature, "temperature", PipelineConfig::default().temperature)?;
    let selection = match a.selection {
        SelectionArg::Topk => Selection::TopK,
        SelectionArg::Random => Selection::Random { seed: ctx.seed },
    };
    let pair = DifferenceMapPair { d0, d1, scale_exponent: s0 };
    let (f01, f10) = match_with_selection(&a0, &a1, &pair, k, temperature, selection)?;
    write_fmap(&f01.to_feature_map(a0.scale_exponent()), &a.out01)?;
    write_fmap(&f10.to_feature_map(a0.scale_exponent()), &a.out10)?;
    ctx.note(format!("matched k = {k} points per direction"));
    Ok(())
}

fn shift(a: &ShiftArgs, ctx: &mut Context) -> Result<()> {
    let map = read_fmap(&a.input)?;
    let mut sparse = SparseFlow::from_feature_map(&map)?;
    let d = PipelineConfig::default();
    let min_conf = ctx.file.pick(a.min_confidence, "min_confidence", 0.0)?;
    sparse = sparse.confident(min_conf)?;
    let t = ctx.file.pick(a.t, "t", DEFAULT_T)?;
    let tau = ctx.file.pick(a.tau, "tau", d.tau)?;
    let k = a.k.unwrap_or(sparse.support_len().max(1));
    let dir = match a.direction {
        DirectionArg::From0 => Direction::From0,
        DirectionArg::From1 => Direction::From1,
    };
    let out = shift_to_t(&sparse, t, dir, k, tau)?;
    write_fmap(&out.to_feature_map(map.scale_exponent()), &a.out)?;
    ctx.note(format!("{} of {} cells survive", out.support_len(), sparse.support_len()));
    Ok(())
}

/// Merges on the compensation grid and adds the change back to `main` at
/// its own resolution.
fn merge_residual(main: &FlowField, merged: &FlowField, main_grid: &FlowField) -> Result<FlowField> {
    main.add(&resize_flow(&merged.sub(main_grid)?, main.height(), main.width())?)
}

fn merge(a: &MergeArgs, ctx: &mut Context) -> Result<()> {
    let (main0, main1) = (read_flo(&a.main0)?, read_flo(&a.main1)?);
    let comp0 = SparseFlow::from_feature_map(&read_fmap(&a.comp0)?)?;
    let comp1 = SparseFlow::from_feature_map(&read_fmap(&a.comp1)?)?;
    let (cfg, _) = ctx.pipeline_config(&a.params)?;
    let (gh, gw) = (comp0.height(), comp0.width());
    let g0 = resize_flow(&main0, gh, gw)?;
    let g1 = resize_flow(&main1, gh, gw)?;
    let (m0, m1) = merge_pipeline(&g0, &g1, &comp0, &comp1, &cfg.merge)?;
    write_flo(&merge_residual(&main0, &m0, &g0)?, &a.out0)?;
    write_flo(&merge_residual(&main1, &m1, &g1)?, &a.out1)?;
    ctx.note("merged");
    Ok(())
}

fn synth_frame(a: &SynthesizeArgs, ctx: &mut Context) -> Result<()> {
    let (i0, i1) = (read_png(&a.i0)?, read_png(&a.i1)?);
    let (ft0, ft1) = (read_flo(&a.ft0)?, read_flo(&a.ft1)?);
    let t = ctx.file.pick(a.t, "t", DEFAULT_T)?;
    let fusion = match &a.fusion {
        Some(p) => scalar_from_fmap(p)?.0,
        None => linear_fusion(i0.height(), i0.width(), t)?,
    };
    write_png(&synthesize(&i0, &i1, &ft0, &ft1, &fusion)?, &a.out)?;
    ctx.note(format!("wrote {}", a.out.display()));
    Ok(())
}

fn evaluate(a: &EvaluateArgs, ctx: &mut Context) -> Result<()> {
    let mut rows = vec![];
    if let (Some(p), Some(gt)) = (&a.pred, &a.gt) {
        let (pred, gt) = (read_png(p)?, read_png(gt)?);
        rows.push(vec!["psnr".to_string(), g(psnr(&pred, &gt)?)]);
        rows.push(vec!["ssim".to_string(), g(ssim(&pred, &gt)?)]);
        rows.push(vec!["laplacian_loss".to_string(), g(laplacian_loss(&pred, &gt, LAPLACIAN_LEVELS)?)]);
    }
    if let (Some(f), Some(gt)) = (&a.flow, &a.gt_flow) {
        rows.push(vec!["epe".to_string(), g(endpoint_error(&read_flo(f)?, &read_flo(gt)?, None)?)]);
    }
    if rows.is_empty() {
        return Err(Error::InvalidParameter("evaluate needs --pred/--gt or --flow/--gt-flow".into()));
    }
    ctx.emit(a.report.as_deref(), &["metric", "value"], &rows)
}

fn curate_cmd(a: &CurateArgs, ctx: &mut Context) -> Result<()> {
    let entries = read_manifest(&a.manifest)?;
    let mode = match a.mode {
        CurateModeArg::RankHalf => CurationMode::RankHalf,
        CurateModeArg::Threshold => CurationMode::Threshold,
    };
    let rows = curate(&entries, a.p, mode, a.threshold)?;
    let to_file = |p: &Path, f: &dyn Fn(&mut Vec<u8>) -> Result<()>| -> Result<()> {
        let mut buf = vec![];
        f(&mut buf)?;
        std::fs::write(p, buf).map_err(|e| Error::io(p, e))
    };
    match &a.out {
        Some(p) => to_file(p, &|b| write_curation_csv(&rows, b))?,
        None => write_curation_csv(&rows, &mut ctx.out)?,
    }
    if let Some(p) = &a.cdf {
        to_file(p, &|b| write_cdf_csv(&rows, b))?;
    }
    if let Some(p) = &a.subset {
        to_file(p, &|b| write_subset_manifest(&rows, &entries, b))?;
    }
    let kept = rows.iter().filter(|r| r.kept).count();
    ctx.note(format!("kept {kept} of {} triplets", rows.len()));
    Ok(())
}

/// File names inside a fixture directory.
pub const FIXTURE_META: &str = "fixture.txt";

pub fn write_fixture(fx: &Fixture, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = &fx.scene;
    write_png(&s.i0, dir.join("I0.png"))?;
    write_png(&s.i1, dir.join("I1.png"))?;
    write_png(&s.igt, dir.join("Igt.png"))?;
    write_flo(&s.flow01, dir.join("flow01_gt.flo"))?;
    write_flo(&s.ft0, dir.join("ft0_gt.flo"))?;
    write_flo(&s.ft1, dir.join("ft1_gt.flo"))?;
    write_flo(&fx.ft0_init, dir.join("ft0_init.flo"))?;
    write_flo(&fx.ft1_init, dir.join("ft1_init.flo"))?;
    write_fmap(&fx.a0, dir.join("A0.fmp"))?;
    write_fmap(&fx.a1, dir.join("A1.fmp"))?;
    let meta = format!("t={}\nseed={}\nscale={}\n", s.t, s.seed, fx.a0.scale_exponent());
    let p = dir.join(FIXTURE_META);
    std::fs::write(&p, meta).map_err(|e| Error::io(&p, e))
}

/// A fixture directory read back from disk. Ground truth is optional.
pub struct LoadedFixture {
    pub i0: Image,
    pub i1: Image,
    pub ft0: FlowField,
    pub ft1: FlowField,
    pub a0: FeatureMap,
    pub a1: FeatureMap,
    pub t: f64,
    pub gt: Option<(FlowField, FlowField, Image)>,
}

pub fn load_fixture(dir: &Path) -> Result<LoadedFixture> {
    let meta_path = dir.join(FIXTURE_META);
    let meta = match std::fs::read_to_string(&meta_path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(&meta_path, e)),
    };
    let mut t = DEFAULT_T;
    for line in meta.lines() {
        if let Some(v) = line.trim().strip_prefix("t=") {
            t = v.parse().map_err(|_| Error::Malformed(format!("{}: bad t {v:?}", meta_path.display())))?;
        }
    }
    let gt_paths = [dir.join("ft0_gt.flo"), dir.join("ft1_gt.flo"), dir.join("Igt.png")];
    let gt = if gt_paths.iter().all(|p| p.is_file()) {
        Some((read_flo(&gt_paths[0])?, read_flo(&gt_paths[1])?, read_png(&gt_paths[2])?))
    } else {
        None
    };
    Ok(LoadedFixture {
        i0: read_png(dir.join("I0.png"))?,
        i1: read_png(dir.join("I1.png"))?,
        ft0: read_flo(dir.join("ft0_init.flo"))?,
        ft1: read_flo(dir.join("ft1_init.flo"))?,
        a0: read_fmap(dir.join("A0.fmp"))?,
        a1: read_fmap(dir.join("A1.fmp"))?,
        t,
        gt,
    })
}

fn synth_fixture(a: &SynthArgs, ctx: &mut Context) -> Result<()> {
    let seed = ctx.seed;
    let default_shape = a.size == crate::scenes::FIXTURE_SIZE
        && a.square == crate::scenes::FIXTURE_SQUARE
        && (a.dx, a.dy) == crate::scenes::FIXTURE_DISPLACEMENT
        && a.scale == crate::scenes::FIXTURE_SCALE;
    let fx = match a.scene {
        SceneArg::MovingSquare if default_shape && !a.exact => moving_square_fixture(seed)?,
        SceneArg::MovingSquare => {
            let scene = moving_square(a.size, a.size, a.square, (a.dx, a.dy), seed)?;
            let mut fx = exact_fixture(scene, a.scale)?;
            if !a.exact {
                let mid = fx.scene.square_at(0.5).expect("moving square");
                fx.ft0_init = crate::scenes::corrupt_flow(&fx.scene.ft0, mid, Corruption::Zero, seed)?;
                fx.ft1_init = crate::scenes::corrupt_flow(&fx.scene.ft1, mid, Corruption::Zero, seed)?;
            }
            fx
        }
        SceneArg::Translation => {
            let scene = translation_scene(a.size, a.size, (a.dx, a.dy), seed)?;
            let mut fx = exact_fixture(scene, a.scale)?;
            if !a.exact {
                fx.ft0_init = FlowField::zeros(a.size, a.size)?;
                fx.ft1_init = FlowField::zeros(a.size, a.size)?;
            }
            fx
        }
    };
    write_fixture(&fx, &a.out)?;
    ctx.note(format!("wrote fixture to {}", a.out.display()));
    Ok(())
}

fn sparsities(list: &[f64], ctx: &Context) -> Result<Vec<f64>> {
    if list.is_empty() {
        Ok(vec![ctx.file.pick(None, "sparsity", 0.125)?])
    } else {
        Ok(list.to_vec())
    }
}

const RUN_HEADER: &[&str] = &[
    "sparsity",
    "selection",
    "k",
    "scale_exponent",
    "mean_d0",
    "mean_d1",
    "support_01",
    "support_10",
    "support_t0",
    "support_t1",
    "epe_before",
    "epe_after",
    "psnr_before",
    "psnr_after",
];

fn run_fixture(a: &RunArgs, ctx: &mut Context) -> Result<()> {
    let fx = load_fixture(&a.fixtures)?;
    let (mut cfg, _) = ctx.pipeline_config(&a.params)?;
    let t = ctx.file.pick(a.params.t, "t", fx.t)?;
    if a.random {
        cfg.selection = Selection::Random { seed: ctx.seed };
    }
    let gt = fx.gt.as_ref().map(|(f0, f1, igt)| GroundTruth { ft0: f0, ft1: f1, igt });
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rows = vec![];
    for (idx, s) in sparsities(&a.sparsity, ctx)?.into_iter().enumerate() {
        let c = compensate(&fx.i0, &fx.i1, &fx.ft0, &fx.ft1, &fx.a0, &fx.a1, t, s, &cfg, gt)?;
        let r = &c.report;
        rows.push(vec![
            g(s),
            if a.random { "random" } else { "topk" }.to_string(),
            r.k.to_string(),
            r.scale_exponent.to_string(),
            g(r.mean_d0),
            g(r.mean_d1),
            r.support_01.to_string(),
            r.support_10.to_string(),
            r.support_t0.to_string(),
            r.support_t1.to_string(),
            opt(r.epe_before),
            opt(r.epe_after),
            opt(r.psnr_before),
            opt(r.psnr_after),
        ]);
        if let Some(dir) = &a.out {
            write_flo(&c.ft0, dir.join(format!("ft0_{idx}.flo")))?;
            write_flo(&c.ft1, dir.join(format!("ft1_{idx}.flo")))?;
            write_png(&midpoint(&fx.i0, &fx.i1, &c.ft0, &c.ft1, t)?, dir.join(format!("It_{idx}.png")))?;
        }
        ctx.note(format!("sparsity {}: k = {}", g(s), r.k));
    }
    ctx.emit(a.report.as_deref(), RUN_HEADER, &rows)
}

fn compare(a: &CompareArgs, ctx: &mut Context) -> Result<()> {
    let fx = load_fixture(&a.fixtures)?;
    let (gt0, gt1, _) =
        fx.gt.as_ref().ok_or_else(|| Error::InvalidParameter("compare-reversal needs ground-truth flows".into()))?;
    let (cfg, _) = ctx.pipeline_config(&a.params)?;
    let t = ctx.file.pick(a.params.t, "t", fx.t)?;
    let s = ctx.file.pick(a.sparsity, "sparsity", 0.125)?;
    let cmp = compare_reversal(&fx.i0, &fx.i1, &fx.ft0, &fx.ft1, &fx.a0, &fx.a1, t, gt0, gt1, s, &cfg)?;
    let rows: Vec<Vec<String>> = cmp
        .rows
        .iter()
        .map(|(m, e0, e1)| vec![m.to_string(), g(*e0), g(*e1), g(0.5 * (e0 + e1))])
        .collect();
    ctx.emit(a.report.as_deref(), &["method", "epe_t0", "epe_t1", "epe_mean"], &rows)
}
