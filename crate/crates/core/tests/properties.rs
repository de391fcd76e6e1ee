use proptest::prelude::*;

use sparseflow::matching::{similarity_row, SparseFlow, SparsePointSet};
use sparseflow::merge::{convex_merge, WeightVolume};
use sparseflow::tensor_io::{FeatureMap, FlowField, Image, Planar, Planes, ScalarMap};
use sparseflow::warping::{backward_warp, forward_warp, splat_mass, Border};

const H: usize = 6;
const W: usize = 7;
const N: usize = H * W;

fn image(c: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0..1.0f64, c * N).prop_map(move |d| Image::new(Planes::new(c, H, W, d).unwrap()).unwrap())
}

fn flow(amp: f64) -> impl Strategy<Value = FlowField> {
    (prop::collection::vec(-amp..amp, N), prop::collection::vec(-amp..amp, N))
        .prop_map(|(u, v)| FlowField::from_uv(H, W, u, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_flow_is_identity(img in image(3)) {
        let zero = FlowField::zeros(H, W).unwrap();
        for border in [Border::Clamp, Border::Zero] {
            let out = backward_warp(&img, &zero, border).unwrap();
            prop_assert_eq!(out.planes().data(), img.planes().data());
        }
        let (fw, wts) = forward_warp(&img, &zero).unwrap();
        prop_assert_eq!(fw.planes().data(), img.planes().data());
        prop_assert!(wts.values().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn backward_warp_is_linear(a in image(1), b in image(1), f in flow(4.0), alpha in -2.0..2.0f64) {
        let combo = Image::new(Planes::new(1, H, W,
            a.planes().data().iter().zip(b.planes().data()).map(|(x, y)| alpha * x + y).collect()).unwrap()).unwrap();
        for border in [Border::Clamp, Border::Zero] {
            let lhs = backward_warp(&combo, &f, border).unwrap();
            let wa = backward_warp(&a, &f, border).unwrap();
            let wb = backward_warp(&b, &f, border).unwrap();
            for i in 0..N {
                let rhs = alpha * wa.planes().data()[i] + wb.planes().data()[i];
                prop_assert!((lhs.planes().data()[i] - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn splatting_conserves_in_bounds_mass(m in prop::collection::vec(0.0..1.0f64, N), f in flow(0.49)) {
        // every source lands inside after clamping the flow so targets stay in the frame
        let inside = FlowField::from_fn(H, W, |y, x| {
            let (u, v) = f.at(y * W + x);
            let u = if x == 0 { u.abs() } else if x == W - 1 { -u.abs() } else { u };
            let v = if y == 0 { v.abs() } else if y == H - 1 { -v.abs() } else { v };
            (u, v)
        }).unwrap();
        let src = ScalarMap::new(H, W, m.clone()).unwrap();
        let out = splat_mass(&src, &inside).unwrap();
        prop_assert!((out.sum() - m.iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn forward_warp_stays_in_input_range(img in image(1), f in flow(3.0)) {
        let (fw, wts) = forward_warp(&img, &f).unwrap();
        let hi = img.planes().data().iter().cloned().fold(0.0, f64::max);
        for (v, w) in fw.planes().data().iter().zip(wts.values()) {
            if *w == 0.0 {
                prop_assert_eq!(*v, 0.0);
            } else {
                prop_assert!(*v >= -1e-12 && *v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn similarity_rows_are_distributions(
        a in prop::collection::vec(-3.0..3.0f64, 4 * N),
        b in prop::collection::vec(-3.0..3.0f64, 4 * N),
        p in 0..N,
        temperature in 0.1..10.0f64,
    ) {
        let a = FeatureMap::new(Planes::new(4, H, W, a).unwrap(), 0);
        let b = FeatureMap::new(Planes::new(4, H, W, b).unwrap(), 0);
        let row = similarity_row(&a, &b, p, temperature);
        prop_assert_eq!(row.len(), N);
        prop_assert!(row.iter().all(|&s| s >= 0.0));
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn merge_stays_inside_the_value_range(
        main in flow(5.0),
        vals in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), N),
        keep in prop::collection::vec(any::<bool>(), N),
        logits in prop::collection::vec(-4.0..4.0f64, 18 * N),
    ) {
        let pts: Vec<(usize, f64)> = (0..N).filter(|&i| keep[i]).map(|i| (i, 1.0)).collect();
        let support: Vec<(f64, f64)> = pts.iter().map(|&(i, _)| vals[i]).collect();
        let k = pts.len();
        let comp = SparseFlow::new(H, W, SparsePointSet::new(pts, N).unwrap(), &support, vec![1.0; k]).unwrap();
        let wv = WeightVolume::new(3, Planes::new(18, H, W, logits).unwrap()).unwrap();
        let merged = convex_merge(&main, &comp, &wv).unwrap();
        let all_u = main.u().iter().chain(comp.grid().u());
        let (lo, hi) = all_u.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        prop_assert!(merged.u().iter().all(|&u| u >= lo - 1e-9 && u <= hi + 1e-9));
    }
}
