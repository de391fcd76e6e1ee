//! The full compensation pipeline: difference maps, sparse matching, flow
//! shifting, merging and upsampling back to image resolution.

use crate::error::{Error, Result};
use crate::flaw::{difference_maps_at_scale, DifferenceMapPair};
use crate::matching::{match_with_selection, Selection, SparseFlow};
use crate::merge::{merge_pipeline, HeuristicWeights, MergeWeights};
use crate::metrics::{endpoint_error, psnr};
use crate::scenes::Fixture;
use crate::shift::{linear_combination, linear_reversal, shift_to_t, Direction};
use crate::synthesis::{linear_fusion, synthesize};
use crate::tensor_io::{resize_flow, FeatureMap, FlowField, Image, Planar};
use crate::warping::DEFAULT_HOLE_TAU;

pub const DEFAULT_SCALE_EXPONENT: u8 = 3;
pub const DEFAULT_T: f64 = 0.5;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_MIN_MATCH_CONFIDENCE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Expected scale exponent of the feature maps; `None` accepts whatever
    /// the features carry.
    pub scale_exponent: Option<u8>,
    pub tau: f64,
    pub temperature: f64,
    /// Matches below this peak probability are dropped before shifting.
    pub min_match_confidence: f64,
    pub merge: HeuristicWeights,
    pub selection: Selection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scale_exponent: None,
            tau: DEFAULT_HOLE_TAU,
            temperature: DEFAULT_TEMPERATURE,
            min_match_confidence: DEFAULT_MIN_MATCH_CONFIDENCE,
            merge: HeuristicWeights::default(),
            selection: Selection::TopK,
        }
    }
}

/// Ground truth used only for reporting.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth<'a> {
    pub ft0: &'a FlowField,
    pub ft1: &'a FlowField,
    pub igt: &'a Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub k: usize,
    pub scale_exponent: u8,
    pub mean_d0: f64,
    pub mean_d1: f64,
    /// Support sizes of `f_01`, `f_10`, `F~_t0`, `F~_t1`.
    pub support_01: usize,
    pub support_10: usize,
    pub support_t0: usize,
    pub support_t1: usize,
    /// Mean endpoint error of both intermediate flows, before and after.
    pub epe_before: Option<f64>,
    pub epe_after: Option<f64>,
    /// Midpoint PSNR with linear fusion, before and after.
    pub psnr_before: Option<f64>,
    pub psnr_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compensation {
    pub ft0: FlowField,
    pub ft1: FlowField,
    pub report: Report,
}

/// Intermediate products, exposed for inspection and the baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct Stages {
    pub dmaps: DifferenceMapPair,
    pub k: usize,
    pub f01: SparseFlow,
    pub f10: SparseFlow,
    pub comp_t0: SparseFlow,
    pub comp_t1: SparseFlow,
}

/// `ceil(sparsity * cells)`, at least one.
pub fn points_for(sparsity: f64, cells: usize) -> Result<usize> {
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(Error::InvalidParameter(format!("sparsity {sparsity} outside (0, 1]")));
    }
    Ok(((sparsity * cells as f64 - 1e-9).ceil() as usize).clamp(1, cells))
}

#[allow(clippy::too_many_arguments)]
pub fn run_stages(
    i0: &Image,
    i1: &Image,
    ft0: &FlowField,
    ft1: &FlowField,
    a0: &FeatureMap,
    a1: &FeatureMap,
    t: f64,
    sparsity: f64,
    cfg: &PipelineConfig,
) -> Result<Stages> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t = {t} outside [0, 1]")));
    }
    let scale = a0.scale_exponent();
    if a1.scale_exponent() != scale || cfg.scale_exponent.is_some_and(|s| s != scale) {
        return Err(Error::InvalidParameter(format!(
            "feature scale exponents {} / {} disagree with the configuration ({:?})",
            scale,
            a1.scale_exponent(),
            cfg.scale_exponent
        )));
    }
    let dmaps = difference_maps_at_scale(i0, i1, ft0, ft1, cfg.tau, scale)?;
    let k = points_for(sparsity, dmaps.d0.values().len())?;
    let (f01, f10) = match_with_selection(a0, a1, &dmaps, k, cfg.temperature, cfg.selection)?;
    let comp_t1 = shift_to_t(&f01.confident(cfg.min_match_confidence)?, t, Direction::From0, k, cfg.tau)?;
    let comp_t0 = shift_to_t(&f10.confident(cfg.min_match_confidence)?, t, Direction::From1, k, cfg.tau)?;
    Ok(Stages { dmaps, k, f01, f10, comp_t0, comp_t1 })
}

fn mean_epe(a0: &FlowField, a1: &FlowField, gt: &GroundTruth) -> Result<f64> {
    Ok(0.5 * (endpoint_error(a0, gt.ft0, None)? + endpoint_error(a1, gt.ft1, None)?))
}

/// Midpoint frame synthesized from the two intermediate flows with
/// constant `1 - t` fusion.
pub fn midpoint(i0: &Image, i1: &Image, ft0: &FlowField, ft1: &FlowField, t: f64) -> Result<Image> {
    synthesize(i0, i1, ft0, ft1, &linear_fusion(i0.height(), i0.width(), t)?)
}

/// Runs the whole method with an arbitrary merge-weight source. The merged
/// grid flows enter the full-resolution flows as a residual, so cells the
/// merge leaves untouched keep their initial full-resolution values.
#[allow(clippy::too_many_arguments)]
pub fn compensate_with_weights(
    i0: &Image,
    i1: &Image,
    ft0: &FlowField,
    ft1: &FlowField,
    a0: &FeatureMap,
    a1: &FeatureMap,
    t: f64,
    sparsity: f64,
    cfg: &PipelineConfig,
    weights: &dyn MergeWeights,
    gt: Option<GroundTruth>,
) -> Result<Compensation> {
    let st = run_stages(i0, i1, ft0, ft1, a0, a1, t, sparsity, cfg)?;
    let (gh, gw) = (a0.height(), a0.width());
    let main0 = resize_flow(ft0, gh, gw)?;
    let main1 = resize_flow(ft1, gh, gw)?;
    let (m0, m1) = merge_pipeline(&main0, &main1, &st.comp_t0, &st.comp_t1, weights)?;
    let (h, w) = (ft0.height(), ft0.width());
    let out0 = ft0.add(&resize_flow(&m0.sub(&main0)?, h, w)?)?;
    let out1 = ft1.add(&resize_flow(&m1.sub(&main1)?, h, w)?)?;

    let mut report = Report {
        k: st.k,
        scale_exponent: st.dmaps.scale_exponent,
        mean_d0: st.dmaps.d0.mean(),
        mean_d1: st.dmaps.d1.mean(),
        support_01: st.f01.support_len(),
        support_10: st.f10.support_len(),
        support_t0: st.comp_t0.support_len(),
        support_t1: st.comp_t1.support_len(),
        epe_before: None,
        epe_after: None,
        psnr_before: None,
        psnr_after: None,
    };
    if let Some(g) = gt {
        report.epe_before = Some(mean_epe(ft0, ft1, &g)?);
        report.epe_after = Some(mean_epe(&out0, &out1, &g)?);
        report.psnr_before = Some(psnr(&midpoint(i0, i1, ft0, ft1, t)?, g.igt)?);
        report.psnr_after = Some(psnr(&midpoint(i0, i1, &out0, &out1, t)?, g.igt)?);
    }
    Ok(Compensation { ft0: out0, ft1: out1, report })
}

/// The method with the configured heuristic merge weights.
#[allow(clippy::too_many_arguments)]
pub fn compensate(
    i0: &Image,
    i1: &Image,
    ft0: &FlowField,
    ft1: &FlowField,
    a0: &FeatureMap,
    a1: &FeatureMap,
    t: f64,
    sparsity: f64,
    cfg: &PipelineConfig,
    gt: Option<GroundTruth>,
) -> Result<Compensation> {
    compensate_with_weights(i0, i1, ft0, ft1, a0, a1, t, sparsity, cfg, &cfg.merge, gt)
}

/// Same pipeline with seeded uniform point sampling instead of top-k.
#[allow(clippy::too_many_arguments)]
pub fn compensate_random_baseline(
    i0: &Image,
    i1: &Image,
    ft0: &FlowField,
    ft1: &FlowField,
    a0: &FeatureMap,
    a1: &FeatureMap,
    t: f64,
    sparsity: f64,
    cfg: &PipelineConfig,
    seed: u64,
    gt: Option<GroundTruth>,
) -> Result<Compensation> {
    let cfg = PipelineConfig { selection: Selection::Random { seed }, ..cfg.clone() };
    compensate(i0, i1, ft0, ft1, a0, a1, t, sparsity, &cfg, gt)
}

impl Fixture {
    pub fn ground_truth(&self) -> GroundTruth<'_> {
        GroundTruth { ft0: &self.scene.ft0, ft1: &self.scene.ft1, igt: &self.scene.igt }
    }

    pub fn compensate(&self, sparsity: f64, cfg: &PipelineConfig) -> Result<Compensation> {
        let s = &self.scene;
        compensate(&s.i0, &s.i1, &self.ft0_init, &self.ft1_init, &self.a0, &self.a1, s.t, sparsity, cfg, Some(self.ground_truth()))
    }

    pub fn compensate_random(&self, sparsity: f64, cfg: &PipelineConfig, seed: u64) -> Result<Compensation> {
        let s = &self.scene;
        compensate_random_baseline(
            &s.i0, &s.i1, &self.ft0_init, &self.ft1_init, &self.a0, &self.a1, s.t, sparsity, cfg, seed, Some(self.ground_truth()),
        )
    }

    /// Midpoint PSNR of the initial flows, without compensation.
    pub fn psnr_uncompensated(&self) -> Result<f64> {
        let s = &self.scene;
        psnr(&midpoint(&s.i0, &s.i1, &self.ft0_init, &self.ft1_init, s.t)?, &s.igt)
    }
}

/// Endpoint errors of the three ways to turn `f_01`, `f_10` into
/// intermediate compensation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReversalComparison {
    /// `(method, EPE of F_t0, EPE of F_t1)` for flow shift, linear
    /// combination and linear reversal, in that order.
    pub rows: Vec<(&'static str, f64, f64)>,
}

impl ReversalComparison {
    pub fn mean(&self, method: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == method).map(|r| 0.5 * (r.1 + r.2))
    }
}

/// Compares flow shifting with the two linear baselines on the coarse grid.
/// Each sparse compensation is read densely (zero off its support) against
/// the ground-truth intermediate flows resampled to the grid.
#[allow(clippy::too_many_arguments)]
pub fn compare_reversal(
    i0: &Image,
    i1: &Image,
    ft0: &FlowField,
    ft1: &FlowField,
    a0: &FeatureMap,
    a1: &FeatureMap,
    t: f64,
    gt0: &FlowField,
    gt1: &FlowField,
    sparsity: f64,
    cfg: &PipelineConfig,
) -> Result<ReversalComparison> {
    let st = run_stages(i0, i1, ft0, ft1, a0, a1, t, sparsity, cfg)?;
    let (gh, gw) = (a0.height(), a0.width());
    let gt0 = resize_flow(gt0, gh, gw)?;
    let gt1 = resize_flow(gt1, gh, gw)?;
    let epe = |c0: &SparseFlow, c1: &SparseFlow| -> Result<(f64, f64)> {
        Ok((endpoint_error(c0.grid(), &gt0, None)?, endpoint_error(c1.grid(), &gt1, None)?))
    };
    // the baselines see the same confident matches the shift does
    let f01 = st.f01.confident(cfg.min_match_confidence)?;
    let f10 = st.f10.confident(cfg.min_match_confidence)?;
    let shift = epe(&st.comp_t0, &st.comp_t1)?;
    let (lc0, lc1) = linear_combination(&f01, &f10, t)?;
    let comb = epe(&lc0, &lc1)?;
    let (lr0, lr1) = linear_reversal(&f01, &f10, t)?;
    let rev = epe(&lr0, &lr1)?;
    Ok(ReversalComparison {
        rows: vec![
            ("flow_shift", shift.0, shift.1),
            ("linear_combination", comb.0, comb.1),
            ("linear_reversal", rev.0, rev.1),
        ],
    })
}

impl Fixture {
    pub fn compare_reversal(&self, sparsity: f64, cfg: &PipelineConfig) -> Result<ReversalComparison> {
        let s = &self.scene;
        compare_reversal(
            &s.i0, &s.i1, &self.ft0_init, &self.ft1_init, &self.a0, &self.a1, s.t, &s.ft0, &s.ft1, sparsity, cfg,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{exact_fixture, moving_square_fixture, translation_scene, DEFAULT_SEED};

    #[test]
    fn points_for_rounds_up() {
        assert_eq!(points_for(0.125, 1024).unwrap(), 128);
        assert_eq!(points_for(1.0, 1024).unwrap(), 1024);
        assert_eq!(points_for(0.001, 10).unwrap(), 1);
        assert_eq!(points_for(1.0 / 3.0, 10).unwrap(), 4);
        assert!(points_for(0.0, 10).is_err());
        assert!(points_for(1.1, 10).is_err());
    }

    #[test]
    fn moving_square_improves() {
        let fx = moving_square_fixture(DEFAULT_SEED).unwrap();
        let out = fx.compensate(0.125, &PipelineConfig::default()).unwrap();
        let r = &out.report;
        assert_eq!(r.k, 128);
        assert!(r.epe_after.unwrap() < r.epe_before.unwrap(), "{r:?}");
        assert!(r.psnr_after.unwrap() > r.psnr_before.unwrap(), "{r:?}");
    }

    #[test]
    fn exact_flows_are_preserved() {
        let scene = translation_scene(64, 64, (8.0, -4.0), 3).unwrap();
        let fx = exact_fixture(scene, 2).unwrap();
        let out = fx.compensate(0.25, &PipelineConfig::default()).unwrap();
        for (a, b) in out.ft0.u().iter().zip(fx.ft0_init.u()) {
            assert!((a - b).abs() < 1e-3);
        }
        for (a, b) in out.ft1.v().iter().zip(fx.ft1_init.v()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn full_random_equals_full_topk() {
        let fx = moving_square_fixture(DEFAULT_SEED).unwrap();
        let cfg = PipelineConfig::default();
        let a = fx.compensate(1.0, &cfg).unwrap();
        let b = fx.compensate_random(1.0, &cfg, 17).unwrap();
        assert_eq!(a.ft0, b.ft0);
        assert_eq!(a.ft1, b.ft1);
    }

    #[test]
    fn flow_shift_beats_linear_baselines() {
        let fx = moving_square_fixture(DEFAULT_SEED).unwrap();
        let cmp = fx.compare_reversal(0.125, &PipelineConfig::default()).unwrap();
        let shift = cmp.mean("flow_shift").unwrap();
        assert!(shift <= cmp.mean("linear_combination").unwrap());
        assert!(shift <= cmp.mean("linear_reversal").unwrap());
    }

    #[test]
    fn scale_mismatch_rejected() {
        let fx = moving_square_fixture(DEFAULT_SEED).unwrap();
        let cfg = PipelineConfig { scale_exponent: Some(3), ..Default::default() };
        assert!(fx.compensate(0.125, &cfg).is_err());
    }
}
