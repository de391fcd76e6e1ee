//! Image quality and flow accuracy measures.

use crate::error::{Error, Result};
use crate::matching::SparsePointSet;
use crate::tensor_io::{check_same_grid, FlowField, Image, Planar};
use crate::warping::{backward_warp, Border};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const LAPLACIAN_LEVELS: usize = 5;
/// Weight of the warp term when combined with the Laplacian term.
pub const WARP_LOSS_WEIGHT: f64 = 0.5;

fn check_images(a: &Image, b: &Image) -> Result<()> {
    check_same_grid(a.planes(), b.planes(), "image metric")?;
    if a.channels() != b.channels() {
        return Err(Error::DimensionMismatch("image metric channel counts differ".into()));
    }
    Ok(())
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// `10 log10(1 / MSE)` for unit-range data, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_images(a, b)?;
    let (x, y) = (a.planes().data(), b.planes().data());
    let mse = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian of `size` taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" correlation: output is `(h - n + 1) x (w - n + 1)`.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM with an 11-tap, sigma 1.5 Gaussian window over every window
/// position that fits inside the image, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_images(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidDimensions(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..a.channels() {
        let (x, y) = (a.planes().plane(c), b.planes().plane(c));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(x, h, w, &k);
        let my = filter_valid(y, h, w, &k);
        let sxx = filter_valid(&xx, h, w, &k);
        let syy = filter_valid(&yy, h, w, &k);
        let sxy = filter_valid(&xy, h, w, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / a.channels() as f64)
}

const PYR_KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn blur_clamped(plane: &[f64], h: usize, w: usize, gain: f64) -> Vec<f64> {
    let at = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] =
                (0..5).map(|t| PYR_KERNEL[t] * plane[y * w + at(x as i64 + t as i64 - 2, w)]).sum::<f64>() * gain;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] =
                (0..5).map(|t| PYR_KERNEL[t] * tmp[at(y as i64 + t as i64 - 2, h) * w + x]).sum::<f64>() * gain;
        }
    }
    out
}

fn pyr_down(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let blurred = blur_clamped(plane, h, w, 1.0);
    let (nh, nw) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(nh * nw);
    for y in 0..nh {
        for x in 0..nw {
            out.push(blurred[2 * y * w + 2 * x]);
        }
    }
    (out, nh, nw)
}

fn pyr_up(plane: &[f64], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    let mut sparse = vec![0.0; th * tw];
    for y in 0..h {
        for x in 0..w {
            if 2 * y < th && 2 * x < tw {
                sparse[2 * y * tw + 2 * x] = plane[y * w + x];
            }
        }
    }
    blur_clamped(&sparse, th, tw, 2.0)
}

/// Laplacian bands of one plane, finest first; the last band is the
/// coarsest Gaussian level.
fn laplacian_bands(plane: &[f64], h: usize, w: usize, levels: usize) -> Vec<Vec<f64>> {
    let mut bands = Vec::with_capacity(levels);
    let (mut cur, mut ch, mut cw) = (plane.to_vec(), h, w);
    for _ in 0..levels - 1 {
        let (down, nh, nw) = pyr_down(&cur, ch, cw);
        let up = pyr_up(&down, nh, nw, ch, cw);
        bands.push(cur.iter().zip(&up).map(|(a, b)| a - b).collect());
        (cur, ch, cw) = (down, nh, nw);
    }
    bands.push(cur);
    bands
}

/// `sum_l 2^l * mean |band_l(a) - band_l(b)|` over a 5-tap Laplacian
/// pyramid with `levels` bands, averaged over channels.
pub fn laplacian_loss(a: &Image, b: &Image, levels: usize) -> Result<f64> {
    check_images(a, b)?;
    if levels == 0 {
        return Err(Error::InvalidParameter("laplacian_loss needs at least one level".into()));
    }
    let (h, w) = (a.height(), a.width());
    let mut total = 0.0;
    for c in 0..a.channels() {
        let ba = laplacian_bands(a.planes().plane(c), h, w, levels);
        let bb = laplacian_bands(b.planes().plane(c), h, w, levels);
        for (l, (x, y)) in ba.iter().zip(&bb).enumerate() {
            total += (1u64 << l) as f64 * mean_abs_diff(x, y);
        }
    }
    Ok(total / a.channels() as f64)
}

/// Sum of the mean L1 errors between `gt` and each input backward-warped
/// by its intermediate flow.
pub fn warp_loss(i0: &Image, i1: &Image, gt: &Image, ft0: &FlowField, ft1: &FlowField) -> Result<f64> {
    check_images(i0, gt)?;
    check_images(i1, gt)?;
    let w0 = backward_warp(i0, ft0, Border::Clamp)?;
    let w1 = backward_warp(i1, ft1, Border::Clamp)?;
    let g = gt.planes().data();
    Ok(mean_abs_diff(g, w0.planes().data()) + mean_abs_diff(g, w1.planes().data()))
}

/// `laplacian_loss + WARP_LOSS_WEIGHT * warp_loss`.
pub fn combined_loss(pred: &Image, i0: &Image, i1: &Image, gt: &Image, ft0: &FlowField, ft1: &FlowField) -> Result<f64> {
    Ok(laplacian_loss(pred, gt, LAPLACIAN_LEVELS)? + WARP_LOSS_WEIGHT * warp_loss(i0, i1, gt, ft0, ft1)?)
}

/// Mean Euclidean distance between two flows, optionally over a subset of
/// cells.
pub fn endpoint_error(flow: &FlowField, gt: &FlowField, support: Option<&SparsePointSet>) -> Result<f64> {
    check_same_grid(flow.planes(), gt.planes(), "endpoint_error")?;
    let epe = |i: usize| {
        let (a, b) = (flow.at(i), gt.at(i));
        (a.0 - b.0).hypot(a.1 - b.1)
    };
    match support {
        Some(s) => {
            if s.indices().last().is_some_and(|&i| i >= flow.u().len()) {
                return Err(Error::DimensionMismatch("support outside flow grid".into()));
            }
            Ok(s.indices().iter().map(|&i| epe(i)).sum::<f64>() / s.len() as f64)
        }
        None => Ok((0..flow.u().len()).map(epe).sum::<f64>() / flow.u().len() as f64),
    }
}
