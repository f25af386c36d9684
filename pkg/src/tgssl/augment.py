"""Trajectory-level augmentations for labeled detection videos.

Trajectory identity comes from ground-truth matching: detections matched to
the same GT track form one trajectory, unmatched detections are clutter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import Box3D, Detection, GtBox, Video, match_to_gt, q9, q9_angle

FALLBACK_ID_DISTANCE = 2.0


@dataclass(frozen=True)
class AugmentConfig:
    copy_paste_m_range: tuple[int, int] = (1, 5)
    paste_max_offset: float = 10.0
    remove_trajectories: bool = True
    trim_min_frames: int = 2
    noise_loc_size_frac: float = 0.10
    noise_yaw_deg: float = 10.0
    noise_score_abs: float = 0.15
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.copy_paste_m_range
        if not (0 <= lo <= hi):
            raise ValueError("copy_paste_m_range must be ordered and non-negative")
        if not (0.0 <= self.noise_loc_size_frac < 1.0):
            raise ValueError("noise_loc_size_frac must be in [0, 1)")
        if self.trim_min_frames < 2:
            raise ValueError("trim_min_frames must be >= 2")
        if self.paste_max_offset < 0 or self.noise_yaw_deg < 0 or self.noise_score_abs < 0:
            raise ValueError("noise magnitudes must be non-negative")


def track_ids(video: Video) -> list[Optional[int]]:
    """GT track id per detection (flat order), None for clutter."""
    if not video.labeled:
        raise ValueError(f"video {video.video_id} is unlabeled")
    return [g.matched_gt_track for fr in video.frames for g in match_to_gt(fr, FALLBACK_ID_DISTANCE)]


def trajectories(video: Video) -> dict[int, list[Detection]]:
    """Detections grouped by GT track, each list in frame order."""
    out: dict[int, list[Detection]] = {}
    for d, tid in zip(video.detections, track_ids(video)):
        if tid is not None:
            out.setdefault(tid, []).append(d)
    return out


def _shift_box(box: Box3D, dx: float, dy: float) -> Box3D:
    return Box3D(
        (q9(box.center[0] + dx), q9(box.center[1] + dy), box.center[2]), box.size, box.yaw, box.velocity
    )


def copy_paste(target: Video, donor: Video, cfg: AugmentConfig, rng: np.random.Generator) -> Video:
    """Paste m random donor trajectory clips into ``target`` and remove m of its own.

    Each clip keeps its relative frame spacing and starts at a random target
    frame, chosen so the clip fits when the target is long enough (otherwise
    its tail is cut at the last frame). It is translated so its first box lies
    within ``paste_max_offset`` of a random existing target detection, or of
    the origin if there is none.
    """
    donor_tracks = trajectories(donor)
    if not donor_tracks:
        raise ValueError(f"donor {donor.video_id} has no trajectories")
    target_tracks = trajectories(target)
    m = int(rng.integers(cfg.copy_paste_m_range[0], cfg.copy_paste_m_range[1] + 1))

    removed: set[int] = set()
    if cfg.remove_trajectories and target_tracks:
        tids = sorted(target_tracks)
        removed = set(int(t) for t in rng.choice(tids, size=min(m, len(tids)), replace=False))

    n_frames = len(target.frames)
    dets_per_frame = [[d for d in fr.detections] for fr in target.frames]
    gts_per_frame = [list(fr.gt_boxes) for fr in target.frames]
    if removed:
        keep = [tid not in removed for tid in track_ids(target)]
        it = iter(keep)
        dets_per_frame = [[d for d in ds if next(it)] for ds in dets_per_frame]
        gts_per_frame = [[g for g in gs if g.track_id not in removed] for gs in gts_per_frame]

    anchors = target.detections
    next_det = max((d.det_id for d in donor.detections + anchors), default=-1) + 1
    next_track = max((g.track_id for fr in target.frames for g in fr.gt_boxes), default=-1) + 1
    donor_tids = sorted(donor_tracks)
    for _ in range(m):
        src_tid = donor_tids[int(rng.integers(len(donor_tids)))]
        track = donor_tracks[src_tid]
        a = int(rng.integers(len(track)))
        b = int(rng.integers(a, len(track)))
        clip = track[a : b + 1]
        f_first = clip[0].frame_idx
        # start early enough for the whole clip to fit when the target is long enough
        span = clip[-1].frame_idx - f_first + 1
        start = int(rng.integers(max(1, n_frames - span + 1)))
        if anchors:
            anchor = anchors[int(rng.integers(len(anchors)))].box.center
        else:
            anchor = (0.0, 0.0, 0.0)
        r = cfg.paste_max_offset * math.sqrt(rng.random())
        phi = rng.uniform(-math.pi, math.pi)
        dx = anchor[0] + r * math.cos(phi) - clip[0].box.center[0]
        dy = anchor[1] + r * math.sin(phi) - clip[0].box.center[1]
        for fd in range(f_first, clip[-1].frame_idx + 1):
            t = start + fd - f_first
            if t >= n_frames:
                break
            for g in donor.frames[fd].gt_boxes:
                if g.track_id == src_tid:
                    gts_per_frame[t].append(GtBox(_shift_box(g.box, dx, dy), g.class_id, next_track))
        for d in clip:
            t = start + d.frame_idx - f_first
            if t >= n_frames:
                break
            dets_per_frame[t].append(replace(d, box=_shift_box(d.box, dx, dy), det_id=next_det, frame_idx=t))
            next_det += 1
        next_track += 1

    frames = tuple(
        replace(fr, detections=tuple(ds), gt_boxes=tuple(gs))
        for fr, ds, gs in zip(target.frames, dets_per_frame, gts_per_frame)
    )
    return replace(target, frames=frames)


def trim_windows(n_frames: int, min_frames: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n_frames) for j in range(i + min_frames - 1, n_frames)]


def random_trim(video: Video, cfg: AugmentConfig, rng: np.random.Generator) -> Video:
    """Uniformly chosen contiguous window of at least ``trim_min_frames`` frames."""
    n = len(video.frames)
    if n < cfg.trim_min_frames:
        raise ValueError(f"video has {n} frames, fewer than trim_min_frames={cfg.trim_min_frames}")
    windows = trim_windows(n, cfg.trim_min_frames)
    i, j = windows[int(rng.integers(len(windows)))]
    frames = tuple(
        replace(
            fr,
            frame_idx=k,
            detections=tuple(replace(d, frame_idx=k) for d in fr.detections),
        )
        for k, fr in enumerate(video.frames[i : j + 1])
    )
    return replace(video, frames=frames)


def random_noise(video: Video, cfg: AugmentConfig, rng: np.random.Generator) -> Video:
    """Jitter location, size and yaw of every detection; score only mid-trajectory.

    Location and size noise are uniform within +-``noise_loc_size_frac`` of the
    box size per axis, yaw noise within +-``noise_yaw_deg``, score noise within
    +-``noise_score_abs`` (clamped to [0, 1]) for detections that are neither
    the first nor the last of their trajectory.
    """
    middle: set[int] = set()
    for track in trajectories(video).values():
        middle.update(d.det_id for d in track[1:-1])
    frac, yaw_n = cfg.noise_loc_size_frac, math.radians(cfg.noise_yaw_deg)
    frames = []
    for fr in video.frames:
        dets = []
        for d in fr.detections:
            size = np.asarray(d.box.size)
            c = np.asarray(d.box.center) + rng.uniform(-1.0, 1.0, 3) * frac * size
            s = size + rng.uniform(-1.0, 1.0, 3) * frac * size
            yaw = d.box.yaw + rng.uniform(-1.0, 1.0) * yaw_n
            score = d.score
            if d.det_id in middle:
                score = min(1.0, max(0.0, score + rng.uniform(-1.0, 1.0) * cfg.noise_score_abs))
            box = Box3D(tuple(q9(v) for v in c), tuple(q9(v) for v in s), q9_angle(yaw), d.box.velocity)
            dets.append(replace(d, box=box, score=q9(score)))
        frames.append(replace(fr, detections=tuple(dets)))
    return replace(video, frames=tuple(frames))


def augment_video(video: Video, donors: list[Video], cfg: AugmentConfig, rng: np.random.Generator, p: float = 0.5) -> Video:
    """Apply copy-paste, trim and noise, each with probability ``p``."""
    out = video
    if donors and rng.random() < p:
        donor = donors[int(rng.integers(len(donors)))]
        if trajectories(donor):
            out = copy_paste(out, donor, cfg, rng)
    if len(out.frames) >= cfg.trim_min_frames and rng.random() < p:
        out = random_trim(out, cfg, rng)
    if rng.random() < p:
        out = random_noise(out, cfg, rng)
    return out
