//! Bilinear backward warping (gather) and bilinear average splatting
//! (scatter).
//!
//! Splatting is made deterministic by first building, for every target
//! pixel, the ordered list of `(source, weight)` contributions (a counting
//! sort in source order), then reducing each target independently. The
//! result does not depend on the number of threads.

use rayon::prelude::*;

use crate::error::Result;
use crate::tensor_io::{check_same_grid, FlowField, Planar, Planes, ScalarMap};

/// Default splat-weight threshold below which a target pixel is a hole.
pub const DEFAULT_HOLE_TAU: f64 = 0.5;

/// How backward warping treats sample taps outside the source grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Border {
    /// Clamp the sample coordinate into the grid.
    #[default]
    Clamp,
    /// Out-of-bounds taps contribute zero.
    Zero,
}

#[inline]
fn sample(plane: &[f64], h: usize, w: usize, x: f64, y: f64, border: Border) -> f64 {
    match border {
        Border::Clamp => {
            let x = x.clamp(0.0, (w - 1) as f64);
            let y = y.clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let top = (1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
            let bottom = (1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
            (1.0 - fy) * top + fy * bottom
        }
        Border::Zero => {
            let (xf, yf) = (x.floor(), y.floor());
            let (fx, fy) = (x - xf, y - yf);
            let (x0, y0) = (xf as i64, yf as i64);
            let mut acc = 0.0;
            for (yy, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
                if yy < 0 || yy >= h as i64 || wy == 0.0 {
                    continue;
                }
                for (xx, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
                    if xx < 0 || xx >= w as i64 || wx == 0.0 {
                        continue;
                    }
                    acc += wx * wy * plane[yy as usize * w + xx as usize];
                }
            }
            acc
        }
    }
}

/// `out(x, y) = src(x + u(x, y), y + v(x, y))`, bilinearly sampled.
pub fn backward_warp<T: Planar>(src: &T, flow: &FlowField, border: Border) -> Result<T> {
    let p = src.planes();
    check_same_grid(p, flow.planes(), "backward_warp")?;
    let (h, w) = (p.height(), p.width());
    let (u, v) = (flow.u(), flow.v());
    let mut out = vec![0.0; p.data().len()];
    for (c, plane_out) in out.chunks_mut(h * w).enumerate() {
        let plane = p.plane(c);
        plane_out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let i = y * w + x;
                *o = sample(plane, h, w, x as f64 + u[i], y as f64 + v[i], border);
            }
        });
    }
    Ok(src.with_planes(Planes::from_raw(p.channels(), h, w, out)))
}

/// Per-target ordered contribution lists for bilinear splatting.
pub(crate) struct SplatPlan {
    height: usize,
    width: usize,
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SplatPlan {
    /// Plans the splat of every source pixel (or only those with
    /// `sources[i] == true`) displaced by `flow`.
    pub(crate) fn new(flow: &FlowField, sources: Option<&[bool]>) -> Self {
        let (h, w) = (flow.height(), flow.width());
        let n = h * w;
        let mut taps: Vec<(usize, usize, f64)> = Vec::with_capacity(4 * n);
        for i in 0..n {
            if sources.is_some_and(|s| !s[i]) {
                continue;
            }
            let (u, v) = flow.at(i);
            let tx = (i % w) as f64 + u;
            let ty = (i / w) as f64 + v;
            let (xf, yf) = (tx.floor(), ty.floor());
            let (fx, fy) = (tx - xf, ty - yf);
            let (x0, y0) = (xf as i64, yf as i64);
            for (yy, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
                if yy < 0 || yy >= h as i64 || wy == 0.0 {
                    continue;
                }
                for (xx, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
                    if xx < 0 || xx >= w as i64 || wx == 0.0 {
                        continue;
                    }
                    taps.push((yy as usize * w + xx as usize, i, wx * wy));
                }
            }
        }
        let mut offsets = vec![0usize; n + 1];
        for &(t, _, _) in &taps {
            offsets[t + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut entries = vec![(0usize, 0.0); taps.len()];
        for (t, s, wt) in taps {
            entries[cursor[t]] = (s, wt);
            cursor[t] += 1;
        }
        Self { height: h, width: w, offsets, entries }
    }

    fn contributions(&self, target: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[target]..self.offsets[target + 1]]
    }

    /// Accumulated splat weight per target pixel.
    pub(crate) fn weights(&self) -> Vec<f64> {
        let w = self.width;
        let mut out = vec![0.0; self.height * w];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                *o = self.contributions(y * w + x).iter().map(|e| e.1).sum();
            }
        });
        out
    }

    /// Accumulated `value * weight` per target pixel for one source plane.
    pub(crate) fn mass(&self, plane: &[f64]) -> Vec<f64> {
        let w = self.width;
        let mut out = vec![0.0; self.height * w];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                *o = self.contributions(y * w + x).iter().map(|&(s, wt)| plane[s] * wt).sum();
            }
        });
        out
    }

    /// Weight-normalized splat of every plane; targets whose weight is
    /// below `min_weight` (or zero) become 0.
    pub(crate) fn normalized(&self, src: &Planes, weights: &[f64], min_weight: f64) -> Planes {
        let n = self.height * self.width;
        let mut data = Vec::with_capacity(src.data().len());
        for c in 0..src.channels() {
            let mass = self.mass(src.plane(c));
            data.extend(mass.iter().zip(weights).map(|(m, &wt)| {
                if wt > 0.0 && wt >= min_weight {
                    m / wt
                } else {
                    0.0
                }
            }));
        }
        debug_assert_eq!(data.len(), src.channels() * n);
        Planes::from_raw(src.channels(), self.height, self.width, data)
    }
}

/// Average splatting: every source pixel deposits `value * w` and `w` on the
/// four integer neighbors of `(x + u, y + v)` with bilinear weights `w`;
/// out-of-bounds deposits are dropped. Returns the weight-normalized result
/// (0 where nothing landed) and the accumulated weight map.
pub fn forward_warp<T: Planar>(src: &T, flow: &FlowField) -> Result<(T, ScalarMap)> {
    let p = src.planes();
    check_same_grid(p, flow.planes(), "forward_warp")?;
    let plan = SplatPlan::new(flow, None);
    let weights = plan.weights();
    let warped = plan.normalized(p, &weights, 0.0);
    Ok((src.with_planes(warped), ScalarMap::from_raw(p.height(), p.width(), weights)))
}

/// Unnormalized splat of a scalar map: the accumulated `value * weight`.
pub fn splat_mass(src: &ScalarMap, flow: &FlowField) -> Result<ScalarMap> {
    check_same_grid(src.planes(), flow.planes(), "splat_mass")?;
    let plan = SplatPlan::new(flow, None);
    Ok(ScalarMap::from_raw(src.height(), src.width(), plan.mass(src.values())))
}

/// Binary mask: 1 where `weight >= tau`, else 0.
pub fn hole_mask(weight: &ScalarMap, tau: f64) -> ScalarMap {
    let data = weight.values().iter().map(|&w| if w >= tau { 1.0 } else { 0.0 }).collect();
    ScalarMap::from_raw(weight.height(), weight.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::Image;

    fn ramp(h: usize, w: usize) -> ScalarMap {
        ScalarMap::from_fn(h, w, |_, x| x as f64).unwrap()
    }

    #[test]
    fn zero_flow_backward_is_identity() {
        let img = Image::from_fn(3, 5, 6, |c, y, x| (c + y * 7 + x) as f64 / 40.0).unwrap();
        let zero = FlowField::zeros(5, 6).unwrap();
        assert_eq!(backward_warp(&img, &zero, Border::Clamp).unwrap(), img);
        assert_eq!(backward_warp(&img, &zero, Border::Zero).unwrap(), img);
    }

    #[test]
    fn ramp_shift_with_clamp() {
        let (h, w) = (4, 8);
        let flow = FlowField::constant(h, w, 1.0, 0.0).unwrap();
        let out = backward_warp(&ramp(h, w), &flow, Border::Clamp).unwrap();
        for y in 0..h {
            for x in 0..w {
                assert_eq!(out.values()[y * w + x], ((x + 1).min(w - 1)) as f64);
            }
        }
    }

    #[test]
    fn zero_border_drops_outside_taps() {
        let ones = ScalarMap::filled(3, 3, 1.0).unwrap();
        let flow = FlowField::constant(3, 3, 0.5, 0.0).unwrap();
        let out = backward_warp(&ones, &flow, Border::Zero).unwrap();
        assert_eq!(out.values()[2], 0.5);
        assert_eq!(out.values()[1], 1.0);
    }

    #[test]
    fn backward_warp_dimension_mismatch() {
        let img = ScalarMap::filled(3, 3, 1.0).unwrap();
        let flow = FlowField::zeros(3, 4).unwrap();
        assert!(backward_warp(&img, &flow, Border::Clamp).is_err());
        assert!(forward_warp(&img, &flow).is_err());
    }

    #[test]
    fn zero_flow_forward_is_identity() {
        let img = Image::from_fn(1, 4, 4, |_, y, x| (y * 4 + x) as f64 / 16.0).unwrap();
        let (out, weight) = forward_warp(&img, &FlowField::zeros(4, 4).unwrap()).unwrap();
        assert_eq!(out, img);
        assert!(weight.values().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn integer_shift_leaves_holes() {
        let (h, w) = (3, 8);
        let src = ScalarMap::from_fn(h, w, |y, x| (y * w + x) as f64).unwrap();
        let (out, weight) = forward_warp(&src, &FlowField::constant(h, w, 3.0, 0.0).unwrap()).unwrap();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x >= 3 {
                    assert_eq!(out.values()[i], src.values()[i - 3]);
                    assert_eq!(weight.values()[i], 1.0);
                } else {
                    assert_eq!(weight.values()[i], 0.0);
                    assert_eq!(out.values()[i], 0.0);
                }
            }
        }
        let mask = hole_mask(&weight, DEFAULT_HOLE_TAU);
        for y in 0..h {
            for x in 0..w {
                assert_eq!(mask.values()[y * w + x], if x < 3 { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn colliding_sources_average() {
        // Pixel 0 (value 0) moves right by one, pixel 1 (value 1) stays.
        let src = ScalarMap::new(1, 2, vec![0.0, 1.0]).unwrap();
        let flow = FlowField::from_uv(1, 2, vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let (out, weight) = forward_warp(&src, &flow).unwrap();
        assert_eq!(out.values()[1], 0.5);
        assert_eq!(weight.values(), &[0.0, 2.0]);
    }

    #[test]
    fn hole_mask_boundaries() {
        let ones = ScalarMap::filled(2, 2, 1.0).unwrap();
        assert!(hole_mask(&ones, 0.5).values().iter().all(|&v| v == 1.0));
        let zeros = ScalarMap::filled(2, 2, 0.0).unwrap();
        assert!(hole_mask(&zeros, 0.0).values().iter().all(|&v| v == 1.0));
        assert!(hole_mask(&zeros, 1e-9).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn splat_mass_counts_deposits() {
        let ones = ScalarMap::filled(1, 4, 1.0).unwrap();
        let flow = FlowField::constant(1, 4, 0.5, 0.0).unwrap();
        let mass = splat_mass(&ones, &flow).unwrap();
        assert_eq!(mass.values(), &[0.5, 1.0, 1.0, 1.0]);
    }
}
