//! Turning frame-to-frame sparse flows into compensation anchored at the
//! intermediate time `t`.
//!
//! `f_t1 = splat((1 - t) * f_01, by t * f_01)` and
//! `f_t0 = splat(t * f_10, by (1 - t) * f_10)`, splatting only support
//! cells. Flaw scores and match confidences travel with the values.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::matching::{SparseFlow, SparsePointSet};
use crate::tensor_io::Planes;
use crate::warping::SplatPlan;

/// Which frame the sparse flow starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `f_01` shifted to `f_t1`.
    From0,
    /// `f_10` shifted to `f_t0`.
    From1,
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("t = {t} outside [0, 1]")))
    }
}

/// Splats the support of `sparse`, scaled by `value_factor`, along
/// `disp_factor * sparse`. Cells with splat weight at least `tau` survive;
/// when more than `k` survive, the `k` whose weight is closest to one clean
/// source (least collision or partial coverage) are kept, ties to the
/// smaller index.
pub fn shift_sparse(sparse: &SparseFlow, value_factor: f64, disp_factor: f64, k: usize, tau: f64) -> Result<SparseFlow> {
    let (h, w) = (sparse.height(), sparse.width());
    if sparse.support_len() == 0 || k == 0 {
        return SparseFlow::empty(h, w);
    }
    let mask = sparse.mask();
    let grid = sparse.grid();
    let plan = SplatPlan::new(&grid.scaled(disp_factor), Some(&mask));
    let weights = plan.weights();

    let n = h * w;
    let mut carried = Vec::with_capacity(4 * n);
    carried.extend(grid.u().iter().map(|u| u * value_factor));
    carried.extend(grid.v().iter().map(|v| v * value_factor));
    carried.extend_from_slice(sparse.score_map().values());
    carried.extend_from_slice(sparse.confidence_map().values());
    let splat = plan.normalized(&Planes::from_raw(4, h, w, carried), &weights, tau);

    let mut survivors: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0 && weights[i] >= tau).collect();
    if survivors.len() > k {
        survivors.sort_by(|&a, &b| {
            let (da, db) = ((weights[a] - 1.0).abs(), (weights[b] - 1.0).abs());
            da.partial_cmp(&db).unwrap_or(Ordering::Equal).then(a.cmp(&b))
        });
        survivors.truncate(k);
        survivors.sort_unstable();
    }
    if survivors.is_empty() {
        return SparseFlow::empty(h, w);
    }
    let values: Vec<_> = survivors.iter().map(|&i| (splat.get(0, i / w, i % w), splat.get(1, i / w, i % w))).collect();
    let points = survivors.iter().map(|&i| (i, splat.get(2, i / w, i % w))).collect();
    let confidence = survivors.iter().map(|&i| splat.get(3, i / w, i % w)).collect();
    SparseFlow::new(h, w, SparsePointSet::new(points, n)?, &values, confidence)
}

/// Flow shifting to time `t`, keeping at most `k` cells.
pub fn shift_to_t(sparse: &SparseFlow, t: f64, direction: Direction, k: usize, tau: f64) -> Result<SparseFlow> {
    check_t(t)?;
    match direction {
        Direction::From0 => shift_sparse(sparse, 1.0 - t, t, k, tau),
        Direction::From1 => shift_sparse(sparse, t, 1.0 - t, k, tau),
    }
}

fn rescaled(sparse: &SparseFlow, factor: f64) -> Result<SparseFlow> {
    let (h, w) = (sparse.height(), sparse.width());
    match sparse.support() {
        None => SparseFlow::empty(h, w),
        Some(s) => {
            let values: Vec<_> = sparse.values().into_iter().map(|(u, v)| (u * factor, v * factor)).collect();
            SparseFlow::new(h, w, s.clone(), &values, sparse.confidence().to_vec())
        }
    }
}

/// Baseline: intermediate flows approximated in place, without moving the
/// anchor, as `F_t0 = -t * f_01` and `F_t1 = -(1 - t) * f_10`.
/// Returns `(f_t0, f_t1)`.
pub fn linear_reversal(f01: &SparseFlow, f10: &SparseFlow, t: f64) -> Result<(SparseFlow, SparseFlow)> {
    check_t(t)?;
    Ok((rescaled(f01, -t)?, rescaled(f10, -(1.0 - t))?))
}

/// Baseline: the linear combination of the two frame-to-frame flows,
/// `F_t0 = -(1 - t) t f_01 + t^2 f_10` and
/// `F_t1 = (1 - t)^2 f_01 - t (1 - t) f_10`, evaluated on the union of both
/// supports where a missing flow counts as zero. Returns `(f_t0, f_t1)`.
pub fn linear_combination(f01: &SparseFlow, f10: &SparseFlow, t: f64) -> Result<(SparseFlow, SparseFlow)> {
    check_t(t)?;
    let (h, w) = (f01.height(), f01.width());
    if (f10.height(), f10.width()) != (h, w) {
        return Err(Error::DimensionMismatch("linear_combination supports".into()));
    }
    let mut union: Vec<usize> = f01.support_indices().iter().chain(f10.support_indices()).copied().collect();
    union.sort_unstable();
    union.dedup();
    if union.is_empty() {
        return Ok((SparseFlow::empty(h, w)?, SparseFlow::empty(h, w)?));
    }
    let lookup = |f: &SparseFlow, i: usize| -> (f64, f64, f64) {
        match f.support_indices().binary_search(&i) {
            Ok(j) => (f.scores()[j], f.confidence()[j], 1.0),
            Err(_) => (0.0, 0.0, 0.0),
        }
    };
    let (mut v0, mut v1, mut pts, mut conf) = (vec![], vec![], vec![], vec![]);
    for &i in &union {
        let (a, b) = (f01.grid().at(i), f10.grid().at(i));
        v0.push((-(1.0 - t) * t * a.0 + t * t * b.0, -(1.0 - t) * t * a.1 + t * t * b.1));
        v1.push(((1.0 - t).powi(2) * a.0 - t * (1.0 - t) * b.0, (1.0 - t).powi(2) * a.1 - t * (1.0 - t) * b.1));
        let (s0, c0, n0) = lookup(f01, i);
        let (s1, c1, n1) = lookup(f10, i);
        pts.push((i, s0.max(s1)));
        conf.push((c0 + c1) / (n0 + n1));
    }
    let support = SparsePointSet::new(pts, h * w)?;
    Ok((
        SparseFlow::new(h, w, support.clone(), &v0, conf.clone())?,
        SparseFlow::new(h, w, support, &v1, conf)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_row(w: usize, row: usize, h: usize, u: f64) -> SparseFlow {
        let pts: Vec<_> = (0..w).map(|x| (row * w + x, 1.0)).collect();
        let support = SparsePointSet::new(pts, h * w).unwrap();
        SparseFlow::new(h, w, support, &vec![(u, 0.0); w], vec![1.0; w]).unwrap()
    }

    #[test]
    fn t_zero_from0_is_unchanged() {
        let f = constant_row(16, 1, 3, 10.0);
        let s = shift_to_t(&f, 0.0, Direction::From0, 16, 0.5).unwrap();
        assert_eq!(s.grid(), f.grid());
        assert_eq!(s.support_indices(), f.support_indices());
    }

    #[test]
    fn half_shift_of_constant_row() {
        let (w, h) = (32, 3);
        let f = constant_row(w, 1, h, 10.0);
        let s = shift_to_t(&f, 0.5, Direction::From0, w, 0.5).unwrap();
        assert_eq!(s.support_indices(), &(w + 5..2 * w).collect::<Vec<_>>()[..]);
        for (u, v) in s.values() {
            assert!((u - 5.0).abs() < 1e-12 && v == 0.0);
        }
        for i in 0..h * w {
            if !s.support().unwrap().contains(i) {
                assert_eq!(s.grid().at(i), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn t_one_from0_values_vanish() {
        let f = constant_row(16, 0, 2, 4.0);
        let s = shift_to_t(&f, 1.0, Direction::From0, 16, 0.5).unwrap();
        assert!(s.support_len() > 0);
        assert!(s.values().iter().all(|&(u, v)| u == 0.0 && v == 0.0));
    }

    #[test]
    fn from1_uses_complementary_fractions() {
        let f = constant_row(20, 0, 1, -8.0);
        let s = shift_to_t(&f, 0.25, Direction::From1, 20, 0.5).unwrap();
        // values t * f = -2, moved by (1 - t) * f = -6
        assert_eq!(s.support_indices(), &(0..14).collect::<Vec<_>>()[..]);
        assert!(s.values().iter().all(|&(u, _)| (u + 2.0).abs() < 1e-12));
    }

    #[test]
    fn invalid_t_rejected() {
        let f = constant_row(4, 0, 1, 1.0);
        assert!(shift_to_t(&f, 1.5, Direction::From0, 4, 0.5).is_err());
        assert!(shift_to_t(&f, -0.1, Direction::From1, 4, 0.5).is_err());
    }

    #[test]
    fn collision_averages_and_reselection_caps_support() {
        // cells 0 and 2 both land on cell 1
        let support = SparsePointSet::new(vec![(0, 1.0), (2, 3.0)], 4).unwrap();
        let f = SparseFlow::new(1, 4, support, &[(2.0, 0.0), (-2.0, 0.0)], vec![1.0, 0.5]).unwrap();
        let s = shift_to_t(&f, 0.5, Direction::From0, 2, 0.5).unwrap();
        assert_eq!(s.support_indices(), &[1]);
        assert_eq!(s.values(), vec![(0.0, 0.0)]);
        assert_eq!(s.scores(), &[2.0]);
        assert_eq!(s.confidence(), &[0.75]);

        let row = constant_row(10, 0, 1, 1.0);
        let s = shift_to_t(&row, 0.5, Direction::From0, 3, 0.5).unwrap();
        assert_eq!(s.support_len(), 3);
    }

    #[test]
    fn baselines_keep_anchor() {
        let f01 = constant_row(8, 0, 2, 4.0);
        let f10 = constant_row(8, 1, 2, -4.0);
        let (t0, t1) = linear_reversal(&f01, &f10, 0.5).unwrap();
        assert_eq!(t0.support_indices(), f01.support_indices());
        assert!(t0.values().iter().all(|&(u, _)| u == -2.0));
        assert!(t1.values().iter().all(|&(u, _)| u == 2.0));

        let (c0, c1) = linear_combination(&f01, &f10, 0.5).unwrap();
        assert_eq!(c0.support_len(), 16);
        // row 0: only f01 = 4 -> F_t0 = -1, F_t1 = 1; row 1: only f10 = -4 -> F_t0 = -1, F_t1 = 1
        assert!(c0.values().iter().all(|&(u, _)| (u + 1.0).abs() < 1e-12));
        assert!(c1.values().iter().all(|&(u, _)| (u - 1.0).abs() < 1e-12));
    }
}
