"""Smoke test for the pysparseflow extension.

Build and stage the module first:

    cargo build --release -p sparseflow-python --features extension-module
    cp target/release/libpysparseflow.so python/pysparseflow.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pysparseflow as sf  # noqa: E402


def check(name, ok):
    print(f"{'PASS' if ok else 'FAIL'} {name}")
    return ok


def main():
    results = []

    img = sf.Image(1, 4, 4, [float(i) / 16 for i in range(16)])
    zero = sf.FlowField.constant(4, 4, 0.0, 0.0)
    warped = sf.backward_warp(img, zero)
    results.append(check("zero-flow backward warp is identity", warped.data() == img.data()))

    _, weights = sf.forward_warp(img, zero)
    results.append(check("zero-flow splat weights are one", all(abs(w - 1.0) < 1e-12 for w in weights)))

    flow = sf.FlowField(2, 2, [1.5, 1.5, 1.5, 1.5], [-2.0, -2.0, -2.0, -2.0])
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "f.flo")
        flow.write_flo(path)
        back = sf.FlowField.read_flo(path)
        results.append(check("flo roundtrip", back.u() == flow.u() and back.v() == flow.v()))
        try:
            sf.FlowField.read_flo(os.path.join(d, "missing.flo"))
            results.append(check("missing file raises", False))
        except OSError:
            results.append(check("missing file raises", True))

    a = sf.Image(1, 2, 2, [0.5] * 4)
    b = sf.Image(1, 2, 2, [0.4] * 4)
    results.append(check("psnr of uniform 0.1 gap is 20 dB", abs(sf.psnr(a, b) - 20.0) < 1e-3))

    mean, top = sf.motion_stats(sf.FlowField.constant(8, 8, 3.0, 4.0), 0.05)
    results.append(check("motion stats of constant flow", abs(mean - 5.0) < 1e-12 and abs(top - 5.0) < 1e-12))

    fx = sf.Fixture.moving_square()
    before = fx.psnr_uncompensated()
    ft0, ft1, k, _, _ = sf.compensate(fx.i0, fx.i1, fx.ft0_init, fx.ft1_init, fx.a0, fx.a1, 0.125)
    after = sf.psnr(sf.synthesize(fx.i0, fx.i1, ft0, ft1), fx.igt)
    results.append(check(f"compensation improves the fixture ({before:.2f} -> {after:.2f} dB, k={k})",
                         k == 128 and after > before and math.isfinite(after)))

    failed = results.count(False)
    print(f"{len(results) - failed}/{len(results)} passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
