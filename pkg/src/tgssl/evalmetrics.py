"""Center-distance average precision, mAP, ROC AUC.

Detections are matched greedily in descending score order to the nearest
unmatched ground truth of the same class in the same frame, within a planar
distance threshold. AP is the exact area under the precision/recall step curve
(no interpolation, no recall floor).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .calibrate import ece
from .core import Video, greedy_match, match_to_gt

MAP_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class ScoredDet:
    frame_key: tuple
    class_id: int
    score: float
    xy: tuple[float, float]


@dataclass(frozen=True)
class GtObj:
    frame_key: tuple
    class_id: int
    xy: tuple[float, float]


def _tp_flags(dets: Sequence[ScoredDet], gts: Sequence[GtObj], dist_threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Scores and TP flags, sorted by descending score (stable)."""
    by_frame: dict = {}
    for i, d in enumerate(dets):
        by_frame.setdefault(d.frame_key, ([], []))[0].append(i)
    for j, g in enumerate(gts):
        by_frame.setdefault(g.frame_key, ([], []))[1].append(j)
    tp = np.zeros(len(dets), dtype=bool)
    for di, gi in by_frame.values():
        if not di or not gi:
            continue
        m = greedy_match(
            np.array([dets[i].xy for i in di], dtype=float).reshape(-1, 2),
            np.array([dets[i].score for i in di]),
            np.array([dets[i].class_id for i in di]),
            np.array([gts[j].xy for j in gi], dtype=float).reshape(-1, 2),
            np.array([gts[j].class_id for j in gi]),
            dist_threshold,
        )
        tp[np.asarray(di)[m >= 0]] = True
    scores = np.array([d.score for d in dets], dtype=float)
    order = np.argsort(-scores, kind="stable")
    return scores[order], tp[order]


def average_precision(dets: Sequence[ScoredDet], gts: Sequence[GtObj], dist_threshold: float) -> float:
    """Single-class AP. Raises ValueError if there is no ground truth."""
    if not gts:
        raise ValueError("AP undefined without ground truth")
    if not dets:
        return 0.0
    _, tp = _tp_flags(dets, gts, dist_threshold)
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    return float(precision[tp].sum() / len(gts))


def per_class_ap(
    dets: Sequence[ScoredDet], gts: Sequence[GtObj], thresholds: Iterable[float] = MAP_THRESHOLDS
) -> dict[int, dict[float, float]]:
    classes = sorted({g.class_id for g in gts})
    table = {}
    for c in classes:
        dc = [d for d in dets if d.class_id == c]
        gc = [g for g in gts if g.class_id == c]
        table[c] = {float(t): average_precision(dc, gc, t) for t in thresholds}
    return table


def mean_ap(dets: Sequence[ScoredDet], gts: Sequence[GtObj], thresholds: Iterable[float] = MAP_THRESHOLDS) -> float:
    """Mean of AP over evaluable classes and distance thresholds."""
    table = per_class_ap(dets, gts, thresholds)
    if not table:
        raise ValueError("no class has ground truth")
    return float(np.mean([ap for row in table.values() for ap in row.values()]))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted as one half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def video_dets(video: Video, scores=None, centers=None) -> list[ScoredDet]:
    """Flatten a video's detections, optionally overriding scores/centers."""
    out = []
    for i, d in enumerate(video.detections):
        s = d.score if scores is None else float(scores[i])
        xy = tuple(d.box.center[:2]) if centers is None else (float(centers[i][0]), float(centers[i][1]))
        out.append(ScoredDet((video.video_id, d.frame_idx), d.class_id, s, xy))
    return out


def video_gts(video: Video) -> list[GtObj]:
    if not video.labeled:
        raise ValueError(f"video {video.video_id} has no ground truth")
    return [
        GtObj((video.video_id, fr.frame_idx), g.class_id, tuple(g.box.center[:2]))
        for fr in video.frames
        for g in fr.gt_boxes
    ]


def node_labels(video: Video) -> np.ndarray:
    """Per-detection TP labels from the default ground-truth matcher."""
    return np.array([g.label for fr in video.frames for g in match_to_gt(fr)], dtype=np.int64)


def evaluate(pred: Sequence[Video], gt: Sequence[Video]) -> dict:
    """Per-class AP table, mAP, node AUC and ECE of predicted videos vs ground truth.

    ``pred`` and ``gt`` are paired by ``video_id``; their detections must agree.
    """
    gt_by_id = {v.video_id: v for v in gt}
    dets, gts, scores, labels = [], [], [], []
    for pv in pred:
        gv = gt_by_id.get(pv.video_id)
        if gv is None:
            raise ValueError(f"no ground truth for {pv.video_id}")
        dets += video_dets(pv)
        gts += video_gts(gv)
        s = np.array([d.score for d in pv.detections], dtype=float)
        # labels come from the GT video's detections; scores from the prediction
        relabeled = gv.with_scores(s) if len(s) == len(gv.detections) else None
        if relabeled is None:
            raise ValueError(f"{pv.video_id}: prediction and ground truth detections differ")
        scores.append(s)
        labels.append(node_labels(relabeled))
    table = per_class_ap(dets, gts)
    s_all = np.concatenate(scores) if scores else np.empty(0)
    y_all = np.concatenate(labels) if labels else np.empty(0)
    out = {
        "ap": {str(c): {str(t): ap for t, ap in row.items()} for c, row in table.items()},
        "map": float(np.mean([ap for row in table.values() for ap in row.values()])) if table else None,
        "auc": roc_auc(s_all, y_all) if 0 < y_all.sum() < len(y_all) else None,
        "ece": ece(s_all, y_all) if len(s_all) else None,
    }
    return out


def write_metrics(metrics: dict, out_path: str | Path) -> None:
    """metrics.json plus a companion per-class AP CSV."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    with out_path.with_suffix(".csv").open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class_id", "threshold", "ap"])
        for c, row in metrics["ap"].items():
            for t, ap in row.items():
                w.writerow([c, t, ap])
