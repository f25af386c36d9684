import math

import numpy as np
import pytest

from tgssl.core import Box3D, Detection, Frame, GtBox, Video, q9, q9_angle


def random_box(rng, extent=30.0, speed=6.0) -> Box3D:
    return Box3D(
        center=tuple(q9(v) for v in (*rng.uniform(-extent, extent, 2), rng.uniform(-1, 1))),
        size=tuple(q9(v) for v in rng.uniform(0.5, 5.0, 3)),
        yaw=q9_angle(rng.uniform(-math.pi, math.pi)),
        velocity=tuple(q9(v) for v in rng.uniform(-speed, speed, 2)),
    )


def random_video(rng, n_frames=5, max_dets=6, labeled=True, n_classes=2, video_id="v", dt=0.5) -> Video:
    """Unstructured random video: arbitrary boxes, scores and ground truth."""
    frames, det_id = [], 0
    for f in range(n_frames):
        dets = []
        for _ in range(int(rng.integers(0, max_dets + 1))):
            dets.append(
                Detection(
                    box=random_box(rng),
                    score=q9(rng.uniform(0.0, 1.0)),
                    class_id=int(rng.integers(n_classes)),
                    num_points=int(rng.integers(0, 3000)),
                    det_id=det_id,
                    frame_idx=f,
                )
            )
            det_id += 1
        gts = None
        if labeled:
            gts = tuple(
                GtBox(random_box(rng), int(rng.integers(n_classes)), t) for t in range(int(rng.integers(0, 4)))
            )
        frames.append(Frame(f, q9(f * dt), tuple(dets), gts))
    return Video(video_id, tuple(frames), labeled)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_bench(tmp_path_factory):
    """A small on-disk benchmark shared by pipeline and CLI tests."""
    from tgssl.simworld import WorldConfig, make_benchmark

    root = tmp_path_factory.mktemp("bench")
    make_benchmark(root, 3, 4, 2, WorldConfig(n_objects=4, n_frames=12, seed=5))
    return root


def rel_err(a, b, floor=1e-8):
    """|a - b| / max(|a|, |b|, floor), elementwise."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def fd_check(loss_fn, params, grads, picks, h=1e-5):
    """Central differences of ``loss_fn(params)`` at (name, flat index) picks.

    Returns (analytic, numeric) arrays. ``params`` is perturbed in place and
    restored.
    """
    ana, num = [], []
    for name, idx in picks:
        flat = params[name].reshape(-1)
        old = flat[idx]
        flat[idx] = old + h
        up = loss_fn(params)
        flat[idx] = old - h
        dn = loss_fn(params)
        flat[idx] = old
        num.append((up - dn) / (2 * h))
        ana.append(grads[name].reshape(-1)[idx])
    return np.array(ana), np.array(num)


def random_picks(rng, params, n):
    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    flat = rng.choice(sizes.sum(), size=n, replace=n > sizes.sum())
    bounds = np.cumsum(sizes)
    out = []
    for f in flat:
        k = int(np.searchsorted(bounds, f, side="right"))
        out.append((names[k], int(f - (bounds[k - 1] if k else 0))))
    return out
