//! Difference maps that score how likely each source pixel is to carry a
//! flawed intermediate flow.
//!
//! For `D_0`: warp `I_0` to time `t` with `F_t0` (backward), push the result
//! on to frame 1 with `F_t1` (forward), compare against `I_1`, drop pixels
//! that the same roundtrip of a ones-map leaves as holes, and pull the
//! residual back to the frame-0 pixels responsible for it. `D_1` swaps the
//! roles of the two frames.

use crate::error::{Error, Result};
use crate::tensor_io::{check_same_grid, downscale_area, resize_flow, FlowField, Image, Planar, ScalarMap};
use crate::warping::{backward_warp, forward_warp, hole_mask, splat_mass, Border, SplatPlan};

#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMapPair {
    pub d0: ScalarMap,
    pub d1: ScalarMap,
    pub scale_exponent: u8,
}

/// Backward-warps `img` by `f_t_to_a` then forward-warps the result by
/// `f_t_to_b`. Returns the splatted image and its splat weights.
pub fn warp_roundtrip(img: &Image, f_t_to_a: &FlowField, f_t_to_b: &FlowField) -> Result<(Image, ScalarMap)> {
    let at_t = backward_warp(img, f_t_to_a, Border::Clamp)?;
    forward_warp(&at_t, f_t_to_b)
}

/// Hole mask of the roundtrip: a ones-map is backward-warped with zero
/// border (so samples leaving the frame carry no mass), splatted, and cells
/// whose received mass is below `tau` are holes.
pub fn roundtrip_hole_mask(f_t_to_a: &FlowField, f_t_to_b: &FlowField, tau: f64) -> Result<ScalarMap> {
    check_same_grid(f_t_to_a.planes(), f_t_to_b.planes(), "roundtrip_hole_mask")?;
    let ones = ScalarMap::filled(f_t_to_a.height(), f_t_to_a.width(), 1.0)?;
    let at_t = backward_warp(&ones, f_t_to_a, Border::Zero)?;
    Ok(hole_mask(&splat_mass(&at_t, f_t_to_b)?, tau))
}

/// Sum over channels of `|reference - warped|`.
pub fn raw_difference(reference: &Image, warped: &Image) -> Result<ScalarMap> {
    let (a, b) = (reference.planes(), warped.planes());
    check_same_grid(a, b, "raw_difference")?;
    if a.channels() != b.channels() {
        return Err(Error::DimensionMismatch(format!(
            "raw_difference: {} vs {} channels",
            a.channels(),
            b.channels()
        )));
    }
    let n = a.plane_len();
    let mut out = vec![0.0; n];
    for c in 0..a.channels() {
        for ((o, x), y) in out.iter_mut().zip(a.plane(c)).zip(b.plane(c)) {
            *o += (x - y).abs();
        }
    }
    Ok(ScalarMap::from_raw(a.height(), a.width(), out))
}

/// Elementwise `holes * raw`.
pub fn masked_difference(raw: &ScalarMap, holes: &ScalarMap) -> Result<ScalarMap> {
    check_same_grid(raw.planes(), holes.planes(), "masked_difference")?;
    let data = raw.values().iter().zip(holes.values()).map(|(d, m)| d * m).collect();
    Ok(ScalarMap::from_raw(raw.height(), raw.width(), data))
}

/// Carries a residual located in the destination frame back to the source
/// pixels that produced it: backward-warp by `f_t_to_b` (zero border), then
/// splat by `f_t_to_a`, normalized where the splat weight reaches `tau`.
pub fn pull_back(diff_at_target: &ScalarMap, f_t_to_b: &FlowField, f_t_to_a: &FlowField, tau: f64) -> Result<ScalarMap> {
    check_same_grid(diff_at_target.planes(), f_t_to_b.planes(), "pull_back")?;
    check_same_grid(f_t_to_b.planes(), f_t_to_a.planes(), "pull_back")?;
    let at_t = backward_warp(diff_at_target, f_t_to_b, Border::Zero)?;
    let plan = SplatPlan::new(f_t_to_a, None);
    let weights = plan.weights();
    Ok(at_t.with_planes(plan.normalized(at_t.planes(), &weights, tau)))
}

fn one_side(src: &Image, dst: &Image, f_t_src: &FlowField, f_t_dst: &FlowField, tau: f64) -> Result<ScalarMap> {
    let (warped, _) = warp_roundtrip(src, f_t_src, f_t_dst)?;
    let raw = raw_difference(dst, &warped)?;
    let holes = roundtrip_hole_mask(f_t_src, f_t_dst, tau)?;
    let masked = masked_difference(&raw, &holes)?;
    pull_back(&masked, f_t_dst, f_t_src, tau)
}

/// `D_0` and `D_1` at the resolution of the inputs.
pub fn difference_maps(
    i0: &Image,
    i1: &Image,
    ft0: &FlowField,
    ft1: &FlowField,
    tau: f64,
) -> Result<DifferenceMapPair> {
    for (what, p) in [("I1", i1.planes()), ("F_t0", ft0.planes()), ("F_t1", ft1.planes())] {
        check_same_grid(i0.planes(), p, &format!("difference_maps I0 vs {what}"))?;
    }
    Ok(DifferenceMapPair {
        d0: one_side(i0, i1, ft0, ft1, tau)?,
        d1: one_side(i1, i0, ft1, ft0, tau)?,
        scale_exponent: 0,
    })
}

/// Downscales images (area average) and flows (bilinear, rescaled) by
/// `2^scale_exponent`, then builds the difference maps on that grid.
pub fn difference_maps_at_scale(
    i0: &Image,
    i1: &Image,
    ft0: &FlowField,
    ft1: &FlowField,
    tau: f64,
    scale_exponent: u8,
) -> Result<DifferenceMapPair> {
    let g0 = downscale_area(i0, scale_exponent)?;
    let g1 = downscale_area(i1, scale_exponent)?;
    let (h, w) = (g0.height(), g0.width());
    let mut pair = difference_maps(&g0, &g1, &resize_flow(ft0, h, w)?, &resize_flow(ft1, h, w)?, tau)?;
    pair.scale_exponent = scale_exponent;
    Ok(pair)
}
