"""Domain types, JSONL video format, ground-truth matching and seeding."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

DEFAULT_MATCH_THRESHOLD = 2.0


class SchemaError(ValueError):
    """Raised when a video file or object violates the JSONL schema."""


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    w = np.fmod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi)
    w = np.where(w <= 0.0, w + 2.0 * np.pi, w)
    return w - np.pi


def q9(x: float) -> float:
    """Round to 9 significant digits, the precision of the on-disk format."""
    return float(f"{x:.9g}")


def q9_angle(a: float) -> float:
    """:func:`q9` for an angle, kept inside (-pi, pi] after rounding."""
    r = q9(wrap_angle(a))
    if r > math.pi:
        r = 3.14159265
    elif r <= -math.pi:
        r = -3.14159265
    return r


def make_rng(*keys: int) -> np.random.Generator:
    """Independent generator for a tuple of integer keys (seed, stream, index...)."""
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]))


@dataclass(frozen=True)
class Box3D:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        vals = (*self.center, *self.size, self.yaw, *self.velocity)
        if len(self.center) != 3 or len(self.size) != 3 or len(self.velocity) != 2:
            raise SchemaError("box needs center[3], size[3], velocity[2]")
        if not all(math.isfinite(v) for v in vals):
            raise SchemaError("box has non-finite component")
        if min(self.size) <= 0.0:
            raise SchemaError(f"box size must be positive, got {self.size}")
        if not (-math.pi < self.yaw <= math.pi):
            raise SchemaError(f"yaw {self.yaw} outside (-pi, pi]")

    def as_vector(self) -> np.ndarray:
        """(x, y, z, w, l, h, yaw)."""
        return np.array([*self.center, *self.size, self.yaw])


@dataclass(frozen=True)
class Detection:
    box: Box3D
    score: float
    class_id: int
    num_points: int
    det_id: int
    frame_idx: int

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise SchemaError(f"score {self.score} outside [0, 1]")
        if self.num_points < 0:
            raise SchemaError("num_points must be non-negative")
        if self.frame_idx < 0:
            raise SchemaError("frame_idx must be non-negative")


@dataclass(frozen=True)
class GtBox:
    box: Box3D
    class_id: int
    track_id: int


@dataclass(frozen=True)
class Frame:
    frame_idx: int
    timestamp: float
    detections: tuple[Detection, ...] = ()
    gt_boxes: Optional[tuple[GtBox, ...]] = None


@dataclass(frozen=True)
class Video:
    video_id: str
    frames: tuple[Frame, ...]
    labeled: bool
    refined: bool = False

    def __post_init__(self):
        if not self.frames:
            raise SchemaError("video needs at least one frame")
        for i, fr in enumerate(self.frames):
            if fr.frame_idx != i:
                raise SchemaError(f"frame_idx {fr.frame_idx} at position {i}")
            if i and fr.timestamp <= self.frames[i - 1].timestamp:
                raise SchemaError(f"non-monotone timestamp at frame {i}")
            if self.labeled and fr.gt_boxes is None:
                raise SchemaError(f"labeled video missing gt_boxes on frame {i}")

    @property
    def detections(self) -> list[Detection]:
        return [d for fr in self.frames for d in fr.detections]

    def strip_gt(self) -> "Video":
        frames = tuple(replace(fr, gt_boxes=None) for fr in self.frames)
        return replace(self, frames=frames, labeled=False)

    def with_scores(self, scores: Sequence[float], refined: bool | None = None) -> "Video":
        """Copy with detection scores replaced in flat detection order."""
        scores = list(scores)
        if len(scores) != sum(len(fr.detections) for fr in self.frames):
            raise ValueError("score count does not match detection count")
        it = iter(scores)
        frames = tuple(
            replace(fr, detections=tuple(replace(d, score=float(next(it))) for d in fr.detections))
            for fr in self.frames
        )
        return replace(self, frames=frames, refined=self.refined if refined is None else refined)


@dataclass(frozen=True)
class GtLabel:
    label: int
    matched_gt_track: Optional[int] = None
    residuals: tuple[float, ...] = field(default=(0.0,) * 7)


# --------------------------------------------------------------------- JSONL


def _box_to_dict(box: Box3D) -> dict:
    return {
        "center": [q9(v) for v in box.center],
        "size": [q9(v) for v in box.size],
        "yaw": q9_angle(box.yaw),
        "velocity": [q9(v) for v in box.velocity],
    }


def _box_from_dict(d: dict) -> Box3D:
    return Box3D(
        center=tuple(float(v) for v in d["center"]),
        size=tuple(float(v) for v in d["size"]),
        yaw=float(d["yaw"]),
        velocity=tuple(float(v) for v in d.get("velocity", (0.0, 0.0))),
    )


def video_to_lines(video: Video) -> list[str]:
    header = {"video_id": video.video_id, "labeled": video.labeled}
    if video.refined:
        header["refined"] = True
    lines = [json.dumps(header, sort_keys=True)]
    for fr in video.frames:
        dets = []
        for d in fr.detections:
            rec = _box_to_dict(d.box)
            rec.update(score=q9(d.score), class_id=d.class_id, num_points=d.num_points, det_id=d.det_id)
            dets.append(rec)
        gts = None
        if fr.gt_boxes is not None:
            gts = []
            for g in fr.gt_boxes:
                rec = _box_to_dict(g.box)
                rec.update(class_id=g.class_id, track_id=g.track_id)
                gts.append(rec)
        obj = {"frame_idx": fr.frame_idx, "timestamp": q9(fr.timestamp), "detections": dets, "gt_boxes": gts}
        lines.append(json.dumps(obj, sort_keys=True))
    return lines


def write_text(path: str | Path, text: str) -> None:
    """Write UTF-8 text, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def save_video(video: Video, path: str | Path) -> None:
    """Write ``video`` as canonical JSONL (sorted keys, 9 significant digits)."""
    write_text(path, "\n".join(video_to_lines(video)) + "\n")


def load_video(path: str | Path) -> Video:
    """Parse a JSONL video file.

    Raises:
        SchemaError: with the offending 1-based line number in the message.
    """
    path = Path(path)
    header = None
    frames: list[Frame] = []
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if header is None:
                    header = obj
                    if "video_id" not in obj or "labeled" not in obj:
                        raise SchemaError("header needs video_id and labeled")
                    continue
                frames.append(_frame_from_dict(obj))
            except (SchemaError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}: line {lineno}: {exc}") from exc
    if header is None:
        raise SchemaError(f"{path}: empty file")
    frames.sort(key=lambda fr: fr.timestamp)
    for i, fr in enumerate(frames):
        if fr.frame_idx != i or (i and fr.timestamp == frames[i - 1].timestamp):
            raise SchemaError(f"{path}: timestamps are not strictly increasing in frame_idx order (frame_idx {fr.frame_idx})")
    try:
        return Video(
            video_id=str(header["video_id"]),
            frames=tuple(frames),
            labeled=bool(header["labeled"]),
            refined=bool(header.get("refined", False)),
        )
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def _frame_from_dict(obj: dict) -> Frame:
    fidx = int(obj["frame_idx"])
    dets = []
    for d in obj["detections"]:
        dets.append(
            Detection(
                box=_box_from_dict(d),
                score=float(d["score"]),
                class_id=int(d["class_id"]),
                num_points=int(d["num_points"]),
                det_id=int(d["det_id"]),
                frame_idx=fidx,
            )
        )
    gts = obj.get("gt_boxes")
    if gts is not None:
        gts = tuple(GtBox(_box_from_dict(g), int(g["class_id"]), int(g["track_id"])) for g in gts)
    return Frame(frame_idx=fidx, timestamp=float(obj["timestamp"]), detections=tuple(dets), gt_boxes=gts)


# ------------------------------------------------------------------ matching


def greedy_match(
    det_xy: np.ndarray,
    det_scores: np.ndarray,
    det_cls: np.ndarray,
    gt_xy: np.ndarray,
    gt_cls: np.ndarray,
    dist_threshold: float,
) -> np.ndarray:
    """Greedy score-ordered, class-aware nearest-center matching.

    Returns an int array with the matched GT index per detection, -1 if none.
    Ties in score are broken by detection order (stable sort).
    """
    n = len(det_scores)
    out = np.full(n, -1, dtype=np.int64)
    if n == 0 or len(gt_xy) == 0:
        return out
    taken = np.zeros(len(gt_xy), dtype=bool)
    d = np.hypot(det_xy[:, None, 0] - gt_xy[None, :, 0], det_xy[:, None, 1] - gt_xy[None, :, 1])
    for i in np.argsort(-np.asarray(det_scores), kind="stable"):
        cand = (~taken) & (gt_cls == det_cls[i]) & (d[i] <= dist_threshold)
        if cand.any():
            j = int(np.flatnonzero(cand)[np.argmin(d[i][cand])])
            taken[j] = True
            out[i] = j
    return out


def match_to_gt(frame: Frame, dist_threshold: float = DEFAULT_MATCH_THRESHOLD) -> list[GtLabel]:
    """Label each detection of a labeled frame against its ground truth."""
    if frame.gt_boxes is None:
        raise ValueError(f"frame {frame.frame_idx} carries no ground truth")
    dets, gts = frame.detections, frame.gt_boxes
    det_xy = np.array([d.box.center[:2] for d in dets]).reshape(-1, 2)
    gt_xy = np.array([g.box.center[:2] for g in gts]).reshape(-1, 2)
    idx = greedy_match(
        det_xy,
        np.array([d.score for d in dets]),
        np.array([d.class_id for d in dets]),
        gt_xy,
        np.array([g.class_id for g in gts]),
        dist_threshold,
    )
    labels = []
    for d, j in zip(dets, idx):
        if j < 0:
            labels.append(GtLabel(0))
            continue
        g = gts[j]
        res = g.box.as_vector() - d.box.as_vector()
        res[6] = wrap_angle(res[6])
        labels.append(GtLabel(1, g.track_id, tuple(float(r) for r in res)))
    return labels
