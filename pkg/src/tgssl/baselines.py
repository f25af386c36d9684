"""Flicker rescoring baseline."""
from __future__ import annotations

import numpy as np

from .core import Video


def flicker_factors(video: Video, radius: int = 4, dist_threshold: float = 10.0, literal: bool = False) -> np.ndarray:
    """Mean score of the temporally nearby detections of every detection.

    Detection i's center is projected with its velocity into each of the
    ``radius`` preceding and succeeding frames; detections there closer than
    ``dist_threshold`` to the projection are pooled. Empty pool -> 0.
    """
    dets = video.detections
    n = len(dets)
    if n == 0:
        return np.empty(0)
    frame = np.array([d.frame_idx for d in dets])
    t = np.array([video.frames[f].timestamp for f in frame])
    xy = np.array([d.box.center[:2] for d in dets], dtype=float)
    vel = np.array([d.box.velocity for d in dets], dtype=float)
    score = np.array([d.score for d in dets], dtype=float)
    gap = np.abs(frame[None, :] - frame[:, None])
    dt = t[None, :] - t[:, None]
    if literal:
        dt = -dt
    proj = xy[:, None, :] + vel[:, None, :] * dt[..., None]
    dist = np.sqrt(((proj - xy[None, :, :]) ** 2).sum(-1))
    near = (gap >= 1) & (gap <= radius) & (dist < dist_threshold)
    cnt = near.sum(axis=1)
    tot = (near * score[None, :]).sum(axis=1)
    return np.where(cnt > 0, tot / np.maximum(cnt, 1), 0.0)


def flicker_rescore(video: Video, radius: int = 4, dist_threshold: float = 10.0) -> Video:
    """s_new = C_avg * s_old for every detection."""
    c = flicker_factors(video, radius, dist_threshold)
    old = np.array([d.score for d in video.detections], dtype=float)
    return video.with_scores(np.clip(c * old, 0.0, 1.0))
