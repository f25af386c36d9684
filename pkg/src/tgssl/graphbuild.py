"""Temporal detection graphs.

Nodes are candidate detections, edges link detections in frames up to
``temporal_radius`` apart whose velocity-projected centers fall within
``dist_threshold`` of each other.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .core import DEFAULT_MATCH_THRESHOLD, Video, match_to_gt, wrap_angles, write_text

NODE_DIM = 5
EDGE_DIM = 5


@dataclass(frozen=True)
class GraphBuildConfig:
    dist_threshold: float = 10.0
    temporal_radius: int = 4
    point_count_normalizer: float = 2000.0
    # reproduce the printed projection p + v * (T_t - T_target) instead of p + v * dt
    reversed_projection: bool = False

    def __post_init__(self):
        if self.dist_threshold <= 0:
            raise ValueError("dist_threshold must be positive")
        if self.temporal_radius < 1:
            raise ValueError("temporal_radius must be >= 1")
        if self.point_count_normalizer <= 0:
            raise ValueError("point_count_normalizer must be positive")


@dataclass(frozen=True, eq=False)
class VideoGraph:
    """Directed graph over the detections of one video.

    Edge ``e`` carries a message from ``src[e]`` to ``dst[e]``; edges are
    sorted by (dst, src) so ``indptr`` slices the in-edges of each node.
    """

    video_id: str
    det_ids: np.ndarray
    frame_idx: np.ndarray
    x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_attr: np.ndarray
    labels: Optional[np.ndarray] = None
    residuals: Optional[np.ndarray] = None

    @property
    def n_nodes(self) -> int:
        return len(self.det_ids)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def indptr(self) -> np.ndarray:
        return np.searchsorted(self.dst, np.arange(self.n_nodes + 1))

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes)

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def to_dict(self) -> dict:
        d = {
            "video_id": self.video_id,
            "nodes": [
                {"det_id": int(i), "frame_idx": int(f), "x": [float(v) for v in row]}
                for i, f, row in zip(self.det_ids, self.frame_idx, self.x)
            ],
            "edges": [
                {"src": int(s), "dst": int(t), "e": [float(v) for v in row]}
                for s, t, row in zip(self.src, self.dst, self.edge_attr)
            ],
        }
        if self.labels is not None:
            d["labels"] = [int(v) for v in self.labels]
            d["residuals"] = self.residuals.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VideoGraph":
        nodes, edges = d["nodes"], d["edges"]
        labels = np.array(d["labels"], dtype=np.int64) if "labels" in d else None
        residuals = np.array(d["residuals"], dtype=float).reshape(-1, 7) if "residuals" in d else None
        return cls(
            video_id=d["video_id"],
            det_ids=np.array([n["det_id"] for n in nodes], dtype=np.int64),
            frame_idx=np.array([n["frame_idx"] for n in nodes], dtype=np.int64),
            x=np.array([n["x"] for n in nodes], dtype=float).reshape(-1, NODE_DIM),
            src=np.array([e["src"] for e in edges], dtype=np.int64),
            dst=np.array([e["dst"] for e in edges], dtype=np.int64),
            edge_attr=np.array([e["e"] for e in edges], dtype=float).reshape(-1, EDGE_DIM),
            labels=labels,
            residuals=residuals,
        )


def save_graph(graph: VideoGraph, path: str | Path) -> None:
    write_text(path, json.dumps(graph.to_dict()) + "\n")


def load_graph(path: str | Path) -> VideoGraph:
    return VideoGraph.from_dict(json.loads(Path(path).read_text()))


def project_center(p, v, t_from: float, t_to: float, literal: bool = False) -> np.ndarray:
    """Constant-velocity projection of a 3D center; z is left unchanged.

    With ``literal=True`` the time difference is taken as ``t_from - t_to``.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    dt = (t_from - t_to) if literal else (t_to - t_from)
    out = p.copy()
    out[:2] = p[:2] + v[:2] * dt
    return out


def _node_arrays(video: Video):
    dets = [d for fr in video.frames for d in fr.detections]
    ts = np.array([video.frames[d.frame_idx].timestamp for d in dets], dtype=float)
    frame = np.array([d.frame_idx for d in dets], dtype=np.int64)
    box = np.array([d.box.as_vector() for d in dets], dtype=float).reshape(-1, 7)
    vel = np.array([d.box.velocity for d in dets], dtype=float).reshape(-1, 2)
    score = np.array([d.score for d in dets], dtype=float)
    npts = np.array([d.num_points for d in dets], dtype=float)
    det_ids = np.array([d.det_id for d in dets], dtype=np.int64)
    return dets, ts, frame, box, vel, score, npts, det_ids


def build_graph(video: Video, cfg: GraphBuildConfig = GraphBuildConfig()) -> VideoGraph:
    """Build the temporal graph of ``video`` (nodes in flat detection order)."""
    _, ts, frame, box, vel, score, npts, det_ids = _node_arrays(video)
    x = np.column_stack(
        [score, np.minimum(1.0, npts / cfg.point_count_normalizer), box[:, 3], box[:, 4], box[:, 5]]
    ).reshape(-1, NODE_DIM)
    sign = -1.0 if cfg.reversed_projection else 1.0
    src, dst, dist = kernels.radius_edges(
        frame, ts, box[:, :2], vel, cfg.temporal_radius, cfg.dist_threshold, sign
    )
    edge_attr = np.column_stack(
        [
            dist,
            box[src, 3] - box[dst, 3],
            box[src, 4] - box[dst, 4],
            box[src, 5] - box[dst, 5],
            wrap_angles(box[src, 6] - box[dst, 6]),
        ]
    ).reshape(-1, EDGE_DIM)
    return VideoGraph(video.video_id, det_ids, frame, x, src, dst, edge_attr)


def brute_force_edges(video: Video, cfg: GraphBuildConfig = GraphBuildConfig()) -> dict[tuple[int, int], float]:
    """Reference O(n^2) pair scan using :func:`project_center`; maps (src, dst) -> distance."""
    dets = [d for fr in video.frames for d in fr.detections]
    out = {}
    for i, a in enumerate(dets):
        for j, b in enumerate(dets):
            gap = abs(a.frame_idx - b.frame_idx)
            if not (1 <= gap <= cfg.temporal_radius):
                continue
            ta, tb = video.frames[a.frame_idx].timestamp, video.frames[b.frame_idx].timestamp
            pa = project_center(a.box.center, a.box.velocity, ta, tb, cfg.reversed_projection)
            pb = project_center(b.box.center, b.box.velocity, tb, ta, cfg.reversed_projection)
            d_ab = float(np.hypot(*(pa[:2] - np.asarray(b.box.center[:2]))))
            d_ba = float(np.hypot(*(pb[:2] - np.asarray(a.box.center[:2]))))
            if d_ab < cfg.dist_threshold or d_ba < cfg.dist_threshold:
                out[(i, j)] = d_ab
    return out


def attach_labels(
    graph: VideoGraph, video: Video, dist_threshold: float = DEFAULT_MATCH_THRESHOLD
) -> VideoGraph:
    """Annotate nodes with ground-truth match labels and box residuals."""
    if not video.labeled:
        raise ValueError(f"video {video.video_id} is unlabeled")
    gl = [g for fr in video.frames for g in match_to_gt(fr, dist_threshold)]
    if len(gl) != graph.n_nodes:
        raise ValueError("graph and video disagree on node count")
    labels = np.array([g.label for g in gl], dtype=np.int64)
    residuals = np.array([g.residuals for g in gl], dtype=float).reshape(-1, 7)
    return replace(graph, labels=labels, residuals=residuals)
