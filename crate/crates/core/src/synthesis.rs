use crate::error::{Error, Result};
use crate::tensor_io::{check_same_grid, resize_flow, FlowField, Image, Planar, Planes, ScalarMap};
use crate::warping::{backward_warp, Border};

/// `O * W(I0, F_t0) + (1 - O) * W(I1, F_t1)` with clamped backward warps.
pub fn synthesize(i0: &Image, i1: &Image, ft0: &FlowField, ft1: &FlowField, fusion: &ScalarMap) -> Result<Image> {
    check_same_grid(i0.planes(), i1.planes(), "synthesize I0 vs I1")?;
    check_same_grid(i0.planes(), fusion.planes(), "synthesize I0 vs fusion")?;
    if i0.channels() != i1.channels() {
        return Err(Error::DimensionMismatch("synthesize channel counts differ".into()));
    }
    if let Some((index, &value)) = fusion.values().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::FusionOutOfRange { index, value });
    }
    let w0 = backward_warp(i0, ft0, Border::Clamp)?;
    let w1 = backward_warp(i1, ft1, Border::Clamp)?;
    let n = fusion.values().len();
    let data = w0
        .planes()
        .data()
        .iter()
        .zip(w1.planes().data())
        .enumerate()
        .map(|(j, (a, b))| {
            let o = fusion.values()[j % n];
            o * a + (1.0 - o) * b
        })
        .collect();
    Image::new(Planes::new(i0.channels(), i0.height(), i0.width(), data)?)
}

/// Constant fusion map `1 - t`: plain temporal blending.
pub fn linear_fusion(height: usize, width: usize, t: f64) -> Result<ScalarMap> {
    ScalarMap::filled(height, width, 1.0 - t)
}

/// Temporal blending that falls back to whichever frame's sample stays
/// inside the image: `O = (1 - t) v0 / ((1 - t) v0 + t v1)` where `v0`, `v1`
/// are the in-frame fractions of the two backward-warp samples, `1 - t`
/// where neither is valid.
pub fn validity_fusion(ft0: &FlowField, ft1: &FlowField, t: f64) -> Result<ScalarMap> {
    let ones = ScalarMap::filled(ft0.height(), ft0.width(), 1.0)?;
    let v0 = backward_warp(&ones, ft0, Border::Zero)?;
    let v1 = backward_warp(&ones, ft1, Border::Zero)?;
    let data = v0
        .values()
        .iter()
        .zip(v1.values())
        .map(|(a, b)| {
            let (wa, wb) = ((1.0 - t) * a, t * b);
            if wa + wb > 0.0 {
                (wa / (wa + wb)).clamp(0.0, 1.0)
            } else {
                1.0 - t
            }
        })
        .collect();
    ScalarMap::new(ft0.height(), ft0.width(), data)
}

/// Brings a flow computed on the coarse grid back to image resolution.
pub fn upsample_flow_to_full(flow: &FlowField, height: usize, width: usize) -> Result<FlowField> {
    resize_flow(flow, height, width)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: usize) -> Image {
        Image::from_fn(3, 6, 7, |c, y, x| ((c * 7 + y * 13 + x * 5 + seed) % 11) as f64 / 10.0).unwrap()
    }

    #[test]
    fn fusion_one_selects_first_warp() {
        let (a, b) = (img(0), img(3));
        let f0 = FlowField::constant(6, 7, 1.0, 0.5).unwrap();
        let f1 = FlowField::constant(6, 7, -1.0, 0.0).unwrap();
        let ones = ScalarMap::filled(6, 7, 1.0).unwrap();
        let out = synthesize(&a, &b, &f0, &f1, &ones).unwrap();
        assert_eq!(out, backward_warp(&a, &f0, Border::Clamp).unwrap());
    }

    #[test]
    fn identical_inputs_any_fusion() {
        let a = img(1);
        let z = FlowField::zeros(6, 7).unwrap();
        let fusion = ScalarMap::from_fn(6, 7, |y, x| ((y + x) % 5) as f64 / 4.0).unwrap();
        let out = synthesize(&a, &a, &z, &z, &fusion).unwrap();
        for (o, e) in out.planes().data().iter().zip(a.planes().data()) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    #[test]
    fn fusion_out_of_range() {
        let a = img(0);
        let z = FlowField::zeros(6, 7).unwrap();
        let bad = ScalarMap::filled(6, 7, 1.5).unwrap();
        assert!(matches!(synthesize(&a, &a, &z, &z, &bad), Err(Error::FusionOutOfRange { .. })));
    }

    #[test]
    fn validity_fusion_prefers_in_frame_sample() {
        let f0 = FlowField::constant(2, 8, -3.0, 0.0).unwrap();
        let f1 = FlowField::constant(2, 8, 3.0, 0.0).unwrap();
        let o = validity_fusion(&f0, &f1, 0.5).unwrap();
        assert_eq!(o.values()[0], 0.0);
        assert_eq!(o.values()[7], 1.0);
        assert_eq!(o.values()[4], 0.5);
    }
}
