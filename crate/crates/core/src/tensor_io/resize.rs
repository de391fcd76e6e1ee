use rayon::prelude::*;

use super::{FlowField, Planar, Planes};
use crate::error::{Error, Result};

/// Source coordinate and the two taps used for output index `dst` when a
/// length-`src_len` axis is resampled to `dst_len` samples. Pixel centers
/// are aligned (half-pixel convention); outside the outermost centers the
/// border pair is extrapolated linearly, so affine fields are reproduced.
fn taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    if src_len == 1 {
        return (0, 0, 0.0);
    }
    let s = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
    let i0 = (s.floor().max(0.0) as usize).min(src_len - 2);
    (i0, i0 + 1, s - i0 as f64)
}

pub(crate) fn resample_bilinear(src: &Planes, new_h: usize, new_w: usize) -> Result<Planes> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::InvalidDimensions(format!("resize target {new_h}x{new_w}")));
    }
    let (h, w) = (src.height(), src.width());
    let xs: Vec<_> = (0..new_w).map(|x| taps(x, w, new_w)).collect();
    let ys: Vec<_> = (0..new_h).map(|y| taps(y, h, new_h)).collect();
    let mut out = vec![0.0; src.channels() * new_h * new_w];
    for (c, plane_out) in out.chunks_mut(new_h * new_w).enumerate() {
        let plane = src.plane(c);
        plane_out.par_chunks_mut(new_w).enumerate().for_each(|(y, row)| {
            let (y0, y1, fy) = ys[y];
            for (x, o) in row.iter_mut().enumerate() {
                let (x0, x1, fx) = xs[x];
                let top = (1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
                let bottom = (1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
                *o = (1.0 - fy) * top + fy * bottom;
            }
        });
    }
    Ok(Planes::from_raw(src.channels(), new_h, new_w, out))
}

/// Bilinearly resamples a flow to `new_h x new_w` and rescales the
/// displacements to the new grid's pixel units.
pub fn resize_flow(flow: &FlowField, new_h: usize, new_w: usize) -> Result<FlowField> {
    let (h, w) = (flow.height(), flow.width());
    if new_h == h && new_w == w {
        return Ok(flow.clone());
    }
    let resampled = resample_bilinear(flow.planes(), new_h, new_w)?;
    let (sx, sy) = (new_w as f64 / w as f64, new_h as f64 / h as f64);
    let n = new_h * new_w;
    let data = resampled
        .into_data()
        .into_iter()
        .enumerate()
        .map(|(i, v)| if i < n { v * sx } else { v * sy })
        .collect();
    Ok(FlowField::new(Planes::from_raw(2, new_h, new_w, data))?)
}

/// Block-averages every plane by `2^scale_exponent`. The grid must divide
/// evenly.
pub fn downscale_area<T: Planar>(src: &T, scale_exponent: u8) -> Result<T> {
    let f = 1usize << scale_exponent;
    if f == 1 {
        return Ok(src.with_planes(src.planes().clone()));
    }
    let p = src.planes();
    let (h, w) = (p.height(), p.width());
    if h % f != 0 || w % f != 0 {
        return Err(Error::InvalidDimensions(format!(
            "{h}x{w} is not divisible by 2^{scale_exponent}"
        )));
    }
    let (nh, nw) = (h / f, w / f);
    let norm = 1.0 / (f * f) as f64;
    let mut out = vec![0.0; p.channels() * nh * nw];
    for (c, plane_out) in out.chunks_mut(nh * nw).enumerate() {
        let plane = p.plane(c);
        plane_out.par_chunks_mut(nw).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for yy in y * f..(y + 1) * f {
                    for xx in x * f..(x + 1) * f {
                        acc += plane[yy * w + xx];
                    }
                }
                *o = acc * norm;
            }
        });
    }
    Ok(src.with_planes(Planes::from_raw(p.channels(), nh, nw, out)))
}
