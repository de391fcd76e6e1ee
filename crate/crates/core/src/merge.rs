//! Convex merge of a dense flow with sparse compensation over `R x R`
//! neighborhoods of both fields.
//!
//! A [`WeightVolume`] holds `2 * R^2` logit planes: taps `0..R^2` weight the
//! main flow's neighbors, taps `R^2..2R^2` the compensation's neighbors. Tap
//! `(dy + r) * R + (dx + r)` addresses offset `(dx, dy)` with `r = R / 2`.
//! Softmax runs over all `2 * R^2` taps of a pixel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matching::SparseFlow;
use crate::tensor_io::{check_same_grid, FlowField, Planar, Planes, ScalarMap};

/// Logit that acts as minus infinity: `exp(-1e4)` underflows to zero.
pub const MASKED_LOGIT: f64 = -1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVolume {
    radius: usize,
    logits: Planes,
}

impl WeightVolume {
    pub fn new(radius: usize, logits: Planes) -> Result<Self> {
        if radius % 2 == 0 {
            return Err(Error::EvenRadius(radius));
        }
        if logits.channels() != 2 * radius * radius {
            return Err(Error::DimensionMismatch(format!(
                "R = {radius} needs {} logit planes, got {}",
                2 * radius * radius,
                logits.channels()
            )));
        }
        Ok(Self { radius, logits })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn logits(&self) -> &Planes {
        &self.logits
    }

    /// Index of the center tap within one half of the volume.
    pub fn center_tap(&self) -> usize {
        let r = self.radius / 2;
        r * self.radius + r
    }

    /// Softmax-normalized weights of pixel `i`, main taps first.
    pub fn weights_at(&self, i: usize) -> Vec<f64> {
        let n = self.logits.plane_len();
        let taps = self.logits.channels();
        let data = self.logits.data();
        let max = (0..taps).map(|c| data[c * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = (0..taps).map(|c| (data[c * n + i] - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }
}

/// `out(p) = sum_q W_main(p, q) main(q) + W_sgm(p, q) comp(q)` over the
/// `R x R` neighbors `q` of `p`, neighbor coordinates clamped to the grid.
pub fn convex_merge(main: &FlowField, comp: &SparseFlow, weights: &WeightVolume) -> Result<FlowField> {
    check_same_grid(main.planes(), comp.grid().planes(), "convex_merge main vs comp")?;
    check_same_grid(main.planes(), weights.logits(), "convex_merge main vs weights")?;
    let (h, w) = (main.height(), main.width());
    let radius = weights.radius();
    let half = (radius / 2) as i64;
    let r2 = radius * radius;
    let comp = comp.grid();
    let rows: Vec<Vec<(f64, f64)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let wts = weights.weights_at(y * w + x);
                    let (mut u, mut v) = (0.0, 0.0);
                    for dy in -half..=half {
                        let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        for dx in -half..=half {
                            let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                            let tap = ((dy + half) as usize) * radius + (dx + half) as usize;
                            let q = yy * w + xx;
                            let (mu, mv) = main.at(q);
                            let (cu, cv) = comp.at(q);
                            u += wts[tap] * mu + wts[r2 + tap] * cu;
                            v += wts[tap] * mv + wts[r2 + tap] * cv;
                        }
                    }
                    (u, v)
                })
                .collect()
        })
        .collect();
    let (u, v): (Vec<f64>, Vec<f64>) = rows.into_iter().flatten().unzip();
    FlowField::from_uv(h, w, u, v)
}

/// Source of merge logits. The learned predictor of the original method
/// slots in here by producing a [`WeightVolume`] from the same inputs.
pub trait MergeWeights {
    fn weights(&self, main: &FlowField, comp: &SparseFlow, trust: &ScalarMap) -> Result<WeightVolume>;
}

/// Uses a fixed, externally supplied volume regardless of the inputs.
#[derive(Debug, Clone)]
pub struct FixedWeights(pub WeightVolume);

impl MergeWeights for FixedWeights {
    fn weights(&self, _main: &FlowField, _comp: &SparseFlow, _trust: &ScalarMap) -> Result<WeightVolume> {
        Ok(self.0.clone())
    }
}

/// Deterministic stand-in for the learned weight predictor. The main
/// flow's center tap has logit 0. At a support cell whose match confidence
/// reaches `min_confidence`, the compensation's center tap gets
/// `gain * trust(p) + bias`. Every other tap is masked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicWeights {
    pub radius: usize,
    pub gain: f64,
    pub bias: f64,
    pub min_confidence: f64,
}

impl Default for HeuristicWeights {
    fn default() -> Self {
        Self { radius: 3, gain: 400.0, bias: -20.0, min_confidence: 0.7 }
    }
}

impl MergeWeights for HeuristicWeights {
    fn weights(&self, main: &FlowField, comp: &SparseFlow, trust: &ScalarMap) -> Result<WeightVolume> {
        heuristic_weights(main, comp, trust, self)
    }
}

pub fn heuristic_weights(
    main: &FlowField,
    comp: &SparseFlow,
    trust: &ScalarMap,
    params: &HeuristicWeights,
) -> Result<WeightVolume> {
    let radius = params.radius;
    if radius % 2 == 0 {
        return Err(Error::EvenRadius(radius));
    }
    check_same_grid(main.planes(), comp.grid().planes(), "heuristic_weights main vs comp")?;
    check_same_grid(main.planes(), trust.planes(), "heuristic_weights main vs trust")?;
    let (h, w) = (main.height(), main.width());
    let n = h * w;
    let r2 = radius * radius;
    let center = (radius / 2) * radius + radius / 2;
    let mut data = vec![MASKED_LOGIT; 2 * r2 * n];
    data[center * n..(center + 1) * n].fill(0.0);
    let sgm = (r2 + center) * n;
    for (j, &i) in comp.support_indices().iter().enumerate() {
        if comp.confidence()[j] >= params.min_confidence {
            data[sgm + i] = params.gain * trust.values()[i] + params.bias;
        }
    }
    WeightVolume::new(radius, Planes::new(2 * r2, h, w, data)?)
}

/// Merges both directions; each compensation's trust map is the flaw score
/// it carried through the shift.
pub fn merge_pipeline(
    main0: &FlowField,
    main1: &FlowField,
    comp0: &SparseFlow,
    comp1: &SparseFlow,
    source: &dyn MergeWeights,
) -> Result<(FlowField, FlowField)> {
    let merge = |main: &FlowField, comp: &SparseFlow| {
        let wv = source.weights(main, comp, &comp.score_map())?;
        convex_merge(main, comp, &wv)
    };
    Ok((merge(main0, comp0)?, merge(main1, comp1)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::SparsePointSet;

    fn sparse_at(h: usize, w: usize, cells: &[(usize, (f64, f64))], conf: f64) -> SparseFlow {
        let pts = cells.iter().map(|&(i, _)| (i, 1.0)).collect();
        let vals: Vec<_> = cells.iter().map(|&(_, v)| v).collect();
        SparseFlow::new(h, w, SparsePointSet::new(pts, h * w).unwrap(), &vals, vec![conf; cells.len()]).unwrap()
    }

    fn ramp_flow(h: usize, w: usize) -> FlowField {
        FlowField::from_fn(h, w, |y, x| (x as f64 * 0.5, y as f64 - 1.0)).unwrap()
    }

    #[test]
    fn even_radius_rejected() {
        assert!(matches!(WeightVolume::new(2, Planes::zeros(8, 2, 2).unwrap()), Err(Error::EvenRadius(2))));
        let main = FlowField::zeros(2, 2).unwrap();
        let comp = SparseFlow::empty(2, 2).unwrap();
        let trust = ScalarMap::filled(2, 2, 0.0).unwrap();
        let p = HeuristicWeights { radius: 4, ..Default::default() };
        assert!(heuristic_weights(&main, &comp, &trust, &p).is_err());
    }

    #[test]
    fn all_mass_on_main_center_is_identity() {
        let (h, w, r) = (5, 6, 3);
        let main = ramp_flow(h, w);
        let comp = sparse_at(h, w, &[(7, (9.0, 9.0))], 1.0);
        let mut data = vec![MASKED_LOGIT; 2 * r * r * h * w];
        data[4 * h * w..5 * h * w].fill(0.0);
        let wv = WeightVolume::new(r, Planes::new(2 * r * r, h, w, data).unwrap()).unwrap();
        assert_eq!(convex_merge(&main, &comp, &wv).unwrap(), main);
    }

    #[test]
    fn uniform_logits_r1_average() {
        let (h, w) = (3, 3);
        let main = ramp_flow(h, w);
        let comp = sparse_at(h, w, &[(4, (2.0, -2.0))], 1.0);
        let wv = WeightVolume::new(1, Planes::zeros(2, h, w).unwrap()).unwrap();
        let out = convex_merge(&main, &comp, &wv).unwrap();
        for i in 0..9 {
            let (mu, mv) = main.at(i);
            let (cu, cv) = comp.grid().at(i);
            assert!((out.at(i).0 - (mu + cu) / 2.0).abs() < 1e-12);
            assert!((out.at(i).1 - (mv + cv) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_trust_keeps_main() {
        let (h, w) = (6, 6);
        let main = ramp_flow(h, w);
        let comp = sparse_at(h, w, &[(3, (30.0, 0.0)), (20, (-30.0, 4.0))], 1.0);
        let trust = ScalarMap::filled(h, w, 0.0).unwrap();
        let wv = heuristic_weights(&main, &comp, &trust, &HeuristicWeights::default()).unwrap();
        let out = convex_merge(&main, &comp, &wv).unwrap();
        for i in 0..h * w {
            assert!((out.at(i).0 - main.at(i).0).abs() < 1e-6);
            assert!((out.at(i).1 - main.at(i).1).abs() < 1e-6);
        }
    }

    #[test]
    fn high_trust_takes_compensation() {
        let (h, w) = (4, 4);
        let main = ramp_flow(h, w);
        let comp = sparse_at(h, w, &[(5, (12.0, -3.0))], 1.0);
        let trust = ScalarMap::from_fn(h, w, |y, x| if y * w + x == 5 { 2.0 } else { 0.0 }).unwrap();
        let p = HeuristicWeights { gain: 100.0, bias: 0.0, ..Default::default() };
        let out = convex_merge(&main, &comp, &heuristic_weights(&main, &comp, &trust, &p).unwrap()).unwrap();
        assert!((out.at(5).0 - 12.0).abs() < 1e-9 && (out.at(5).1 + 3.0).abs() < 1e-9);
    }

    #[test]
    fn empty_support_is_exact_identity() {
        let main = ramp_flow(4, 5);
        let comp = SparseFlow::empty(4, 5).unwrap();
        let trust = ScalarMap::filled(4, 5, 3.0).unwrap();
        let p = HeuristicWeights { bias: 0.0, ..Default::default() };
        let wv = heuristic_weights(&main, &comp, &trust, &p).unwrap();
        assert_eq!(convex_merge(&main, &comp, &wv).unwrap(), main);
    }

    #[test]
    fn low_confidence_is_masked() {
        let main = ramp_flow(3, 3);
        let comp = sparse_at(3, 3, &[(4, (50.0, 50.0))], 0.1);
        let trust = ScalarMap::filled(3, 3, 10.0).unwrap();
        let wv = heuristic_weights(&main, &comp, &trust, &HeuristicWeights::default()).unwrap();
        assert_eq!(convex_merge(&main, &comp, &wv).unwrap(), main);
    }

    #[test]
    fn single_support_pixel_is_local_for_r1() {
        let (h, w) = (5, 5);
        let main = ramp_flow(h, w);
        let comp = sparse_at(h, w, &[(12, (7.0, 7.0))], 1.0);
        let trust = ScalarMap::filled(h, w, 1.0).unwrap();
        let p = HeuristicWeights { radius: 1, gain: 1.0, bias: 0.0, min_confidence: 0.0 };
        let out = convex_merge(&main, &comp, &heuristic_weights(&main, &comp, &trust, &p).unwrap()).unwrap();
        for i in 0..h * w {
            if i == 12 {
                assert_ne!(out.at(i), main.at(i));
            } else {
                assert_eq!(out.at(i), main.at(i));
            }
        }
    }

    #[test]
    fn pipeline_with_empty_compensation() {
        let m0 = ramp_flow(4, 4);
        let m1 = m0.scaled(-1.0);
        let e = SparseFlow::empty(4, 4).unwrap();
        let (a, b) = merge_pipeline(&m0, &m1, &e, &e, &HeuristicWeights::default()).unwrap();
        assert_eq!((a, b), (m0, m1));
    }
}
