"""Synthetic detection videos with ground truth.

A statistical stand-in for a LiDAR detector's output: true objects move at
constant velocity, the detector misses them i.i.d. per frame, adds short-lived
clutter tracks, jitters boxes and draws scores from class-conditional Beta
distributions.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Box3D, Detection, Frame, GtBox, Video, make_rng, q9, q9_angle, save_video, wrap_angle

# (w, l, h) templates in meters, indexed by class_id
CLASS_SIZES = ((1.9, 4.6, 1.7), (0.7, 0.8, 1.8))
MIN_SCORE = 0.1
SPLITS = ("labeled", "unlabeled", "heldout")


@dataclass(frozen=True)
class WorldConfig:
    n_objects: int = 8
    n_frames: int = 40
    frame_dt: float = 0.5
    arena_half_extent: float = 40.0
    speed_range: tuple[float, float] = (0.0, 8.0)
    miss_prob: float = 0.15
    fp_rate: float = 1.0
    fp_lifetime: tuple[int, int] = (1, 3)
    loc_noise_sigma: float = 0.3
    score_beta_tp: tuple[float, float] = (5.0, 2.0)
    score_beta_fp: tuple[float, float] = (2.0, 5.0)
    vel_noise_sigma: float = 0.5
    yaw_drift_sigma: float = 0.01
    fp_points_scale: float = 0.5
    n_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.miss_prob <= 1.0):
            raise ValueError("miss_prob must be in [0, 1]")
        if self.fp_rate < 0 or self.loc_noise_sigma < 0 or self.vel_noise_sigma < 0:
            raise ValueError("rates and sigmas must be non-negative")
        if self.frame_dt <= 0:
            raise ValueError("frame_dt must be positive")
        if self.n_frames < 1 or self.n_objects < 0:
            raise ValueError("n_frames >= 1 and n_objects >= 0 required")
        if not (0 <= self.speed_range[0] <= self.speed_range[1]):
            raise ValueError("speed_range must be ordered and non-negative")
        if not (1 <= self.fp_lifetime[0] <= self.fp_lifetime[1]):
            raise ValueError("fp_lifetime must be ordered and >= 1")
        if not (1 <= self.n_classes <= len(CLASS_SIZES)):
            raise ValueError(f"n_classes must be in 1..{len(CLASS_SIZES)}")

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown WorldConfig keys: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class TrueTrajectory:
    track_id: int
    class_id: int
    boxes: tuple[Box3D, ...]


def generate_world(cfg: WorldConfig, rng: Optional[np.random.Generator] = None) -> list[TrueTrajectory]:
    """Constant-velocity trajectories with a slow random heading drift.

    The stored velocity of frame t satisfies ``center[t+1] = center[t] + v[t] * dt``.
    """
    rng = make_rng(cfg.seed, 0) if rng is None else rng
    a = cfg.arena_half_extent
    out = []
    for tid in range(cfg.n_objects):
        cls = int(rng.integers(cfg.n_classes))
        size = tuple(s * f for s, f in zip(CLASS_SIZES[cls], rng.uniform(0.9, 1.1, 3)))
        x, y = rng.uniform(-a, a, 2)
        speed = rng.uniform(*cfg.speed_range)
        heading = rng.uniform(-math.pi, math.pi)
        drift = rng.normal(0.0, cfg.yaw_drift_sigma)
        boxes = []
        for _ in range(cfg.n_frames):
            v = (speed * math.cos(heading), speed * math.sin(heading))
            boxes.append(Box3D((x, y, size[2] / 2), size, wrap_angle(heading), v))
            x += v[0] * cfg.frame_dt
            y += v[1] * cfg.frame_dt
            heading += drift
        out.append(TrueTrajectory(tid, cls, tuple(boxes)))
    return out


def _points(rng: np.random.Generator, xy: tuple[float, float], scale: float) -> int:
    rng_m = max(1.0, math.hypot(*xy))
    return int(round(2000.0 / rng_m * scale * rng.uniform(0.8, 1.2)))


def _noisy_box(rng: np.random.Generator, box: Box3D, cfg: WorldConfig) -> Box3D:
    c = np.asarray(box.center) + rng.normal(0.0, cfg.loc_noise_sigma, 3)
    s = np.asarray(box.size) * rng.uniform(0.95, 1.05, 3)
    yaw = q9_angle(box.yaw + rng.normal(0.0, math.radians(2.0)))
    v = np.asarray(box.velocity) + rng.normal(0.0, cfg.vel_noise_sigma, 2)
    return Box3D(
        tuple(q9(t) for t in c), tuple(q9(t) for t in s), yaw, tuple(q9(t) for t in v)
    )


def simulate_detector(
    world: list[TrueTrajectory],
    cfg: WorldConfig,
    rng: Optional[np.random.Generator] = None,
    video_id: str = "video",
    return_sources: bool = False,
):
    """Turn true trajectories into a labeled detection video.

    Per frame every object is detected with probability ``1 - miss_prob``;
    Poisson(``fp_rate``) clutter tracks are born and live ``fp_lifetime``
    frames. Detections scoring below 0.1 are dropped.

    With ``return_sources`` also returns, per detection in flat order, the
    track_id that produced it (-1 for clutter).
    """
    rng = make_rng(cfg.seed, 1) if rng is None else rng
    a = cfg.arena_half_extent
    per_frame: list[list[tuple[Box3D, float, int, int, int]]] = [[] for _ in range(cfg.n_frames)]

    for t in range(cfg.n_frames):
        for traj in world:
            if rng.random() < cfg.miss_prob:
                continue
            true_box = traj.boxes[t]
            box = _noisy_box(rng, true_box, cfg)
            score = rng.beta(*cfg.score_beta_tp)
            per_frame[t].append((box, score, traj.class_id, _points(rng, true_box.center[:2], 1.0), traj.track_id))

        for _ in range(rng.poisson(cfg.fp_rate)):
            life = int(rng.integers(cfg.fp_lifetime[0], cfg.fp_lifetime[1] + 1))
            cls = int(rng.integers(cfg.n_classes))
            size = tuple(s * f for s, f in zip(CLASS_SIZES[cls], rng.uniform(0.8, 1.2, 3)))
            x, y = rng.uniform(-a, a, 2)
            speed = rng.uniform(*cfg.speed_range)
            heading = rng.uniform(-math.pi, math.pi)
            v = (speed * math.cos(heading), speed * math.sin(heading))
            for dt_frames in range(life):
                tt = t + dt_frames
                if tt >= cfg.n_frames:
                    break
                c = (x + v[0] * cfg.frame_dt * dt_frames, y + v[1] * cfg.frame_dt * dt_frames, size[2] / 2)
                clutter = Box3D(c, size, wrap_angle(heading), v)
                box = _noisy_box(rng, clutter, cfg)
                score = rng.beta(*cfg.score_beta_fp)
                per_frame[tt].append((box, score, cls, _points(rng, c[:2], cfg.fp_points_scale), -1))

    frames = []
    sources: list[int] = []
    det_id = 0
    for t in range(cfg.n_frames):
        items = [per_frame[t][i] for i in rng.permutation(len(per_frame[t]))]
        dets = []
        for box, score, cls, npts, src in items:
            score = q9(float(score))
            if score < MIN_SCORE:
                continue
            dets.append(Detection(box, score, cls, npts, det_id, t))
            sources.append(src)
            det_id += 1
        gts = tuple(
            GtBox(
                Box3D(
                    tuple(q9(v) for v in tr.boxes[t].center),
                    tuple(q9(v) for v in tr.boxes[t].size),
                    q9_angle(tr.boxes[t].yaw),
                    tuple(q9(v) for v in tr.boxes[t].velocity),
                ),
                tr.class_id,
                tr.track_id,
            )
            for tr in world
        )
        frames.append(Frame(t, q9(t * cfg.frame_dt), tuple(dets), gts))
    video = Video(video_id, tuple(frames), labeled=True)
    return (video, sources) if return_sources else video


def simulate_video(cfg: WorldConfig, split: str = "labeled", index: int = 0) -> Video:
    """One labeled video on its own RNG stream keyed by (seed, split, index)."""
    rng = make_rng(cfg.seed, SPLITS.index(split) + 1, index)
    world = generate_world(cfg, rng)
    return simulate_detector(world, cfg, rng, video_id=f"{split}_{index:04d}")


def make_benchmark(
    out_dir: str | Path,
    n_labeled: int = 10,
    n_unlabeled: int = 50,
    n_heldout: int = 10,
    cfg: WorldConfig = WorldConfig(),
) -> dict:
    """Write a labeled/unlabeled/heldout split plus manifest to ``out_dir``.

    Unlabeled and held-out files are written without ground truth; their full
    versions go to ``sealed/``, which only evaluation code reads.
    """
    out_dir = Path(out_dir)
    counts = {"labeled": n_labeled, "unlabeled": n_unlabeled, "heldout": n_heldout}
    if min(counts.values()) < 0:
        raise ValueError("split counts must be non-negative")
    splits: dict[str, list[str]] = {}
    for split, n in counts.items():
        splits[split] = []
        for i in range(n):
            video = simulate_video(cfg, split, i)
            rel = f"{split}/{video.video_id}.jsonl"
            if split == "labeled":
                save_video(video, out_dir / rel)
            else:
                save_video(video.strip_gt(), out_dir / rel)
                save_video(video, out_dir / "sealed" / f"{video.video_id}.jsonl")
            splits[split].append(rel)
    manifest = {"config": cfg.to_dict(), "sealed_dir": "sealed", "splits": splits}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
