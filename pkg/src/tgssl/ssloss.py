"""Pseudo labels, uncertainty-weighted losses and the single-frame student.

The student is a small stand-in for a full detector: a logistic rescorer over
per-detection features plus a linear head predicting box residuals. It is
trained with BCE + SmoothL1 on labeled detections and with the
uncertainty-weighted loss on pseudo-labeled ones.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .calibrate import CalibrationMap, apply_binning, entropy_uncertainty
from .core import Box3D, Video, make_rng, match_to_gt, wrap_angle, wrap_angles, write_text
from .graphbuild import VideoGraph
from .tgnn import Adam, sigmoid

EPS = 1e-7
N_FEATURES = 6
RANGE_SCALE = 50.0
POINTS_SCALE = 2000.0
REG_MODES = ("as_written", "inverse")


@dataclass(frozen=True)
class PseudoLabel:
    det_id: int
    box: Box3D
    class_id: int
    calibrated_score: float
    uncertainty: float

    @property
    def positive(self) -> bool:
        return self.calibrated_score > 0.5


@dataclass(frozen=True)
class LossConfig:
    k: float = 2.0
    regression_weight_mode: str = "as_written"
    smooth_l1_delta: float = 1.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("focusing parameter k must be >= 0")
        if self.regression_weight_mode not in REG_MODES:
            raise ValueError(f"regression_weight_mode must be one of {REG_MODES}")


def make_pseudo_labels(video: Video, graph: VideoGraph, gnn_scores, cal: CalibrationMap) -> list[PseudoLabel]:
    """One pseudo label per graph node: calibrated score and its entropy."""
    dets = video.detections
    scores = np.asarray(gnn_scores, dtype=float)
    if len(scores) != graph.n_nodes or len(dets) != graph.n_nodes:
        raise ValueError("scores, graph nodes and detections are not aligned")
    s_hat = apply_binning(cal, np.clip(scores, 0.0, 1.0))
    u = entropy_uncertainty(s_hat)
    return [
        PseudoLabel(d.det_id, d.box, d.class_id, float(s), float(uu))
        for d, s, uu in zip(dets, np.atleast_1d(s_hat), np.atleast_1d(u))
    ]


def save_pseudo_labels(pls: Sequence[PseudoLabel], path: str | Path) -> None:
    """Scores and uncertainties keyed by det_id; boxes stay in the video file."""
    rows = [{"det_id": pl.det_id, "calibrated_score": pl.calibrated_score, "uncertainty": pl.uncertainty} for pl in pls]
    write_text(path, json.dumps(rows) + "\n")


def load_pseudo_labels(path: str | Path, video: Video) -> list[PseudoLabel]:
    """Re-attach saved pseudo labels to the detections of ``video`` (flat order)."""
    rows = {int(r["det_id"]): r for r in json.loads(Path(path).read_text())}
    out = []
    for d in video.detections:
        r = rows.get(d.det_id)
        if r is None:
            raise ValueError(f"{path}: no pseudo label for det_id {d.det_id}")
        out.append(PseudoLabel(d.det_id, d.box, d.class_id, float(r["calibrated_score"]), float(r["uncertainty"])))
    if len(rows) != len(out):
        raise ValueError(f"{path}: pseudo labels for unknown detections")
    return out


def cls_weight(pl: PseudoLabel, k: float) -> float:
    if pl.calibrated_score == 0.5:
        return 0.0
    return (1.0 - pl.uncertainty) ** k


def cls_loss(p: float, pl: PseudoLabel, k: float = 2.0) -> float:
    """Uncertainty-weighted BCE toward the pseudo label's polarity."""
    w = cls_weight(pl, k)
    if w == 0.0:
        return 0.0
    p = min(max(p, EPS), 1.0 - EPS)
    return -w * (math.log(p) if pl.positive else math.log(1.0 - p))


def smooth_l1(d, delta: float = 1.0):
    a = np.abs(d)
    return np.where(a < delta, 0.5 * a * a / delta, a - 0.5 * delta)


def box_residual(target: Box3D, pred: Box3D) -> np.ndarray:
    r = target.as_vector() - pred.as_vector()
    r[6] = wrap_angle(r[6])
    return r


def reg_weight(pl: PseudoLabel, mode: str) -> float:
    return pl.uncertainty if mode == "as_written" else 1.0 - pl.uncertainty


def reg_loss(pred_box: Box3D, pl: PseudoLabel, cfg: LossConfig = LossConfig()) -> float:
    """Weighted SmoothL1 over (x, y, z, w, l, h, yaw) residuals; positives only."""
    if not pl.positive:
        raise ValueError("regression loss applies to positive pseudo labels only")
    res = box_residual(pl.box, pred_box)
    return float(reg_weight(pl, cfg.regression_weight_mode) * smooth_l1(res, cfg.smooth_l1_delta).sum())


def semi_loss(
    probs: Sequence[float],
    pred_boxes: Sequence[Box3D],
    pseudo_labels: Sequence[PseudoLabel],
    cfg: LossConfig = LossConfig(),
) -> float:
    """Mean classification loss over all labels + mean regression loss over positives."""
    if not pseudo_labels:
        raise ValueError("semi_loss needs at least one pseudo label")
    if not (len(probs) == len(pred_boxes) == len(pseudo_labels)):
        raise ValueError("predictions and pseudo labels are not aligned")
    c = [cls_loss(p, pl, cfg.k) for p, pl in zip(probs, pseudo_labels)]
    r = [reg_loss(b, pl, cfg) for b, pl in zip(pred_boxes, pseudo_labels) if pl.positive]
    return float(np.mean(c) + (np.mean(r) if r else 0.0))


# ------------------------------------------------------------------ student

StudentParams = dict  # "w" (6,), "b" (1,), "Wr" (6, 7), "br" (7,)


def init_student(seed: int = 0) -> StudentParams:
    return {
        "w": np.zeros(N_FEATURES),
        "b": np.zeros(1),
        "Wr": np.zeros((N_FEATURES, 7)),
        "br": np.zeros(7),
    }


def student_features(video: Video) -> np.ndarray:
    """(logit raw score, normalized points, w, l, h, range / 50 m) per detection."""
    rows = []
    for d in video.detections:
        s = min(max(d.score, EPS), 1.0 - EPS)
        rows.append(
            (
                math.log(s / (1.0 - s)),
                min(1.0, d.num_points / POINTS_SCALE),
                *d.box.size,
                math.hypot(*d.box.center[:2]) / RANGE_SCALE,
            )
        )
    return np.array(rows, dtype=float).reshape(-1, N_FEATURES)


def student_predict(params: StudentParams, video: Video) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and box residuals for every detection in ``video``."""
    f = student_features(video)
    z = f @ params["w"] + params["b"][0]
    return sigmoid(z), f @ params["Wr"] + params["br"]


def refined_boxes(video: Video, residuals: np.ndarray) -> np.ndarray:
    """(n, 7) detection boxes with predicted residuals added, yaw wrapped."""
    boxes = np.array([d.box.as_vector() for d in video.detections], dtype=float).reshape(-1, 7)
    out = boxes + residuals
    out[:, 6] = wrap_angles(out[:, 6])
    return out


def rescore_video(params: StudentParams, video: Video) -> Video:
    """Copy of ``video`` with scores replaced by the student's probabilities."""
    p, _ = student_predict(params, video)
    return video.with_scores(p)


@dataclass(frozen=True)
class StudentConfig:
    learning_rate: float = 1e-3
    batch_frames: int = 4
    epochs: int = 5
    betas: tuple[float, float] = (0.9, 0.999)
    loss: LossConfig = LossConfig()
    use_uncertainty: bool = True
    seed: int = 0


@dataclass
class _Samples:
    f: np.ndarray
    y: np.ndarray
    cw: np.ndarray
    rt: np.ndarray
    rw: np.ndarray
    reg_mask: np.ndarray
    group: np.ndarray


def _labeled_samples(video: Video) -> tuple:
    f = student_features(video)
    gl = [g for fr in video.frames for g in match_to_gt(fr)]
    y = np.array([g.label for g in gl], dtype=float)
    rt = np.array([g.residuals for g in gl], dtype=float).reshape(-1, 7)
    mask = y > 0
    return f, y, np.ones_like(y), rt, mask.astype(float), mask


def _pseudo_samples(video: Video, pls: Sequence[PseudoLabel], cfg: StudentConfig) -> tuple:
    f = student_features(video)
    if len(pls) != len(f):
        raise ValueError(f"{video.video_id}: pseudo labels not aligned with detections")
    y = np.array([pl.positive for pl in pls], dtype=float)
    if cfg.use_uncertainty:
        pls_w = pls
    else:
        pls_w = [replace(pl, uncertainty=0.0) for pl in pls]
    cw = np.array([cls_weight(pl, cfg.loss.k) for pl in pls_w], dtype=float)
    mask = y > 0
    rw = np.array([reg_weight(pl, cfg.loss.regression_weight_mode) for pl in pls_w]) * mask
    # pseudo boxes are the candidate boxes themselves: target residual is zero
    rt = np.zeros((len(f), 7))
    return f, y, cw, rt, rw, mask


def _collect(labeled, pseudo, cfg) -> _Samples:
    parts, groups, g = [], [], 0
    items = [(v, None) for v in labeled] + [(v, p) for v, p in pseudo]
    for v, pls in items:
        part = _labeled_samples(v) if pls is None else _pseudo_samples(v, pls, cfg)
        parts.append(part)
        frame_of = np.array([d.frame_idx for d in v.detections], dtype=np.int64)
        groups.append(g + frame_of)
        g += len(v.frames)
    cols = list(zip(*parts)) if parts else [[] for _ in range(6)]
    return _Samples(
        f=np.concatenate(cols[0]).reshape(-1, N_FEATURES) if parts else np.empty((0, N_FEATURES)),
        y=np.concatenate(cols[1]) if parts else np.empty(0),
        cw=np.concatenate(cols[2]) if parts else np.empty(0),
        rt=np.concatenate(cols[3]).reshape(-1, 7) if parts else np.empty((0, 7)),
        rw=np.concatenate(cols[4]) if parts else np.empty(0),
        reg_mask=np.concatenate(cols[5]).astype(bool) if parts else np.empty(0, bool),
        group=np.concatenate(groups) if parts else np.empty(0, np.int64),
    ), g


def student_loss_and_grad(params: StudentParams, f, y, cw, rt, rw, reg_mask, delta: float = 1.0):
    """Batch loss: sum(cw * BCE) / n + sum(rw * SmoothL1) / n_reg, and its gradient."""
    n = len(y)
    z = f @ params["w"] + params["b"][0]
    p = sigmoid(z)
    bce = np.logaddexp(0.0, z) - y * z
    loss = float((cw * bce).sum() / n)
    dz = cw * (p - y) / n
    grads = {"w": f.T @ dz, "b": np.array([dz.sum()])}
    n_reg = int(reg_mask.sum())
    pred = f @ params["Wr"] + params["br"]
    diff = pred - rt
    diff[:, 6] = wrap_angles(diff[:, 6])
    if n_reg:
        loss += float((rw[:, None] * smooth_l1(diff, delta)).sum() / n_reg)
        dpred = rw[:, None] * np.clip(diff / delta, -1.0, 1.0) / n_reg
    else:
        dpred = np.zeros_like(diff)
    grads["Wr"] = f.T @ dpred
    grads["br"] = dpred.sum(axis=0)
    return loss, grads


def train_student(
    labeled: Sequence[Video],
    pseudo: Sequence[tuple[Video, Sequence[PseudoLabel]]] = (),
    cfg: StudentConfig = StudentConfig(),
    init: Optional[StudentParams] = None,
) -> tuple[StudentParams, list[float]]:
    """Adam over shuffled mini-batches of frames from labeled + pseudo-labeled videos."""
    if not labeled:
        raise ValueError("train_student needs labeled data")
    params = {k: v.copy() for k, v in (init if init is not None else init_student(cfg.seed)).items()}
    samples, n_groups = _collect(labeled, pseudo, cfg)
    order_by_group = np.argsort(samples.group, kind="stable")
    starts = np.searchsorted(samples.group[order_by_group], np.arange(n_groups + 1))
    opt = Adam(cfg.learning_rate, cfg.betas)
    history = []
    for epoch in range(cfg.epochs):
        perm = make_rng(cfg.seed, 0x5354, epoch).permutation(n_groups)
        tot, cnt = 0.0, 0
        for s in range(0, n_groups, cfg.batch_frames):
            idx = np.concatenate([order_by_group[starts[g] : starts[g + 1]] for g in perm[s : s + cfg.batch_frames]])
            if idx.size == 0:
                continue
            loss, grads = student_loss_and_grad(
                params,
                samples.f[idx],
                samples.y[idx],
                samples.cw[idx],
                samples.rt[idx],
                samples.rw[idx],
                samples.reg_mask[idx],
                cfg.loss.smooth_l1_delta,
            )
            opt.step(params, grads)
            tot += loss * idx.size
            cnt += idx.size
        history.append(tot / max(cnt, 1))
    return params, history
