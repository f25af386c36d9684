"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--sizes 10 50 200]

Sizes are detections per frame over 40 frames. Outputs of the two backends are
checked for exact equality before timing.
"""
import argparse
import timeit

import numpy as np

from tgssl import _pykernels

try:
    from tgssl import _ckernels
except ImportError:
    _ckernels = None


def scene(per_frame, n_frames=40, dt=0.5, seed=0):
    rng = np.random.default_rng(seed)
    frame = np.repeat(np.arange(n_frames), per_frame).astype(np.int64)
    t = frame * dt
    xy = rng.uniform(-60, 60, (len(frame), 2))
    vel = rng.uniform(-8, 8, (len(frame), 2))
    return frame, t, xy, vel


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 50, 200])
    a = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not built; only the numpy path is available")

    print(f"{'kernel':<14}{'nodes':>8}{'edges':>10}{'numpy ms':>12}{'cython ms':>12}{'speedup':>9}")
    for per_frame in a.sizes:
        frame, t, xy, vel = scene(per_frame)
        args = (frame, t, xy, vel, 4, 10.0, 1.0)
        ref = _pykernels.radius_edges(*args)
        py = best_of(lambda: _pykernels.radius_edges(*args), a.repeat)
        row = f"{'radius_edges':<14}{len(frame):>8}{len(ref[0]):>10}{py * 1e3:>12.2f}"
        if _ckernels is not None:
            got = _ckernels.radius_edges(*args)
            assert all(np.array_equal(x, y) for x, y in zip(ref, got)), "backends disagree"
            cy = best_of(lambda: _ckernels.radius_edges(*args), a.repeat)
            row += f"{cy * 1e3:>12.2f}{py / cy:>8.1f}x"
        print(row)

        src, dst = ref[0], ref[1]
        vals = np.random.default_rng(1).normal(size=(len(src), 8))
        n = len(frame)
        py = best_of(lambda: _pykernels.segment_sum(vals, dst, n), a.repeat)
        row = f"{'segment_sum':<14}{n:>8}{len(src):>10}{py * 1e3:>12.2f}"
        if _ckernels is not None:
            np.testing.assert_allclose(_ckernels.segment_sum(vals, dst, n), _pykernels.segment_sum(vals, dst, n), rtol=0, atol=1e-12)
            cy = best_of(lambda: _ckernels.segment_sum(vals, dst, n), a.repeat)
            row += f"{cy * 1e3:>12.2f}{py / cy:>8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
