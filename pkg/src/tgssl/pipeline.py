"""Teacher/student semi-supervised loop.

Iteration 0 trains the student on labeled data, copies it into the teacher's
detector and trains the temporal GNN on (augmented) labeled graphs. Each later
iteration activates another slice of unlabeled videos, pseudo-labels them with
the teacher (detector rescoring -> graph -> GNN -> calibration), trains the
student on labeled + pseudo-labeled data, moves the teacher's detector towards
the student by EMA and fine-tunes the GNN on labeled graphs rebuilt from the
updated teacher.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tgnn
from .augment import AugmentConfig, augment_video
from .calibrate import CalibrationMap, apply_binning, fit_binning
from .core import Video, load_video, make_rng
from .evalmetrics import mean_ap, node_labels, roc_auc, video_dets, video_gts
from .graphbuild import GraphBuildConfig, VideoGraph, attach_labels, build_graph
from .ssloss import (
    LossConfig,
    StudentConfig,
    StudentParams,
    make_pseudo_labels,
    refined_boxes,
    rescore_video,
    student_predict,
    train_student,
)


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("TGSSL_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Order-preserving map, threaded up to ``TGSSL_THREADS`` workers."""
    workers = min(n_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class SslConfig:
    ema_alpha: float = 0.1
    unlabeled_fraction_per_iter: float = 0.2
    iterations: int = 2
    student_epochs: int = 5
    student_init_epochs: int = 20
    student_lr: float = 1e-3
    student_batch_frames: int = 4
    gnn_epochs: int = 5
    gnn_init_epochs: int = 50
    gnn_lr: float = 1e-3
    gnn_batch_videos: int = 1
    k: float = 2.0
    reg_mode: str = "as_written"
    use_uncertainty: bool = True
    augment: bool = True
    n_bins: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.ema_alpha <= 1.0):
            raise ValueError("ema_alpha must be in [0, 1]")
        if not (0.0 < self.unlabeled_fraction_per_iter <= 1.0):
            raise ValueError("unlabeled_fraction_per_iter must be in (0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def student_cfg(self, epochs: int, stage: int) -> StudentConfig:
        return StudentConfig(
            learning_rate=self.student_lr,
            batch_frames=self.student_batch_frames,
            epochs=epochs,
            loss=LossConfig(k=self.k, regression_weight_mode=self.reg_mode),
            use_uncertainty=self.use_uncertainty,
            seed=hash_seed(self.seed, stage),
        )

    def gnn_cfg(self, epochs: int, stage: int) -> tgnn.TrainConfig:
        return tgnn.TrainConfig(
            learning_rate=self.gnn_lr,
            batch_videos=self.gnn_batch_videos,
            epochs=epochs,
            seed=hash_seed(self.seed, stage),
        )


def hash_seed(*keys: int) -> int:
    return int(make_rng(*keys).integers(2**63))


@dataclass
class IterationReport:
    iteration: int
    student_map: Optional[float]
    gnn_auc: Optional[float]
    n_active_unlabeled: int
    n_pseudo_labels: int
    mean_uncertainty: Optional[float]
    student_loss: list = field(default_factory=list)
    gnn_loss: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def ema_update(teacher: dict, student: dict, alpha: float) -> dict:
    """teacher <- alpha * student + (1 - alpha) * teacher, per array."""
    if set(teacher) != set(student):
        raise ValueError("teacher and student parameter names differ")
    out = {}
    for k in teacher:
        t, s = np.asarray(teacher[k]), np.asarray(student[k])
        if t.shape != s.shape:
            raise ValueError(f"{k}: shape {t.shape} vs {s.shape}")
        out[k] = alpha * s + (1.0 - alpha) * t
    return out


def active_count(iteration: int, n_unlabeled: int, fraction: float) -> int:
    """ceil(fraction * iteration * n) capped at n, computed exactly."""
    frac = Fraction(fraction).limit_denominator(10**6)
    return min(n_unlabeled, math.ceil(frac * iteration * n_unlabeled))


# ------------------------------------------------------------------ dataset


@dataclass
class Benchmark:
    root: Path
    labeled: list[Video]
    unlabeled: list[Video]
    heldout: list[Video]
    sealed_dir: Path

    def sealed(self, video_id: str) -> Video:
        """Ground-truth copy of an unlabeled or held-out video (evaluation only)."""
        path = self.sealed_dir / f"{video_id}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"sealed ground truth missing: {path}")
        return load_video(path)

    def has_sealed(self) -> bool:
        return all((self.sealed_dir / f"{v.video_id}.jsonl").exists() for v in self.heldout)


def load_benchmark(manifest_path: str | Path) -> Benchmark:
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    try:
        m = json.loads(manifest_path.read_text())
        splits = {k: [load_video(root / p) for p in m["splits"][k]] for k in ("labeled", "unlabeled", "heldout")}
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"corrupt manifest {manifest_path}: {exc}") from exc
    for v in splits["unlabeled"] + splits["heldout"]:
        if v.labeled:
            raise ValueError(f"{v.video_id}: unlabeled/held-out file carries ground truth")
    return Benchmark(root, splits["labeled"], splits["unlabeled"], splits["heldout"], root / m.get("sealed_dir", "sealed"))


# ------------------------------------------------------------------ teacher


def refine(
    video: Video,
    params: tgnn.GnnParams,
    cal: Optional[CalibrationMap] = None,
    gcfg: GraphBuildConfig = GraphBuildConfig(),
) -> Video:
    """Rescore every detection with the GNN (optionally calibrated); boxes untouched."""
    if video.refined:
        raise ValueError(f"{video.video_id} was already refined")
    if not video.detections:
        raise ValueError(f"{video.video_id} has no detections")
    s = tgnn.gnn_forward(build_graph(video, gcfg), params)
    if cal is not None:
        s = apply_binning(cal, s)
    return video.with_scores(s, refined=True)


def teacher_view(video: Video, detector: Optional[StudentParams]) -> Video:
    """Detections as seen by the teacher's GNN: scores from the teacher detector."""
    return video if detector is None else rescore_video(detector, video)


def gnn_training_source(
    labeled: Sequence[Video],
    detector: Optional[StudentParams],
    gcfg: GraphBuildConfig,
    augment: bool,
    seed: int,
) -> Callable[[int], list[VideoGraph]]:
    views = [teacher_view(v, detector) for v in labeled]
    plain = parallel_map(lambda v: attach_labels(build_graph(v, gcfg), v), views)
    if not augment:
        return lambda epoch: plain
    acfg = AugmentConfig()

    def source(epoch: int) -> list[VideoGraph]:
        def one(i: int) -> VideoGraph:
            rng = make_rng(seed, 0x6175, epoch, i)
            donors = [w for j, w in enumerate(views) if j != i]
            v = augment_video(views[i], donors, acfg, rng)
            return attach_labels(build_graph(v, gcfg), v)

        return parallel_map(one, range(len(views)))

    return source


def teacher_scores(
    videos: Sequence[Video], detector: Optional[StudentParams], gnn_params: tgnn.GnnParams, gcfg: GraphBuildConfig
) -> list[tuple[Video, VideoGraph, np.ndarray]]:
    def one(v: Video):
        g = build_graph(teacher_view(v, detector), gcfg)
        return v, g, tgnn.gnn_forward(g, gnn_params)

    return parallel_map(one, videos)


def fit_teacher_calibration(
    labeled: Sequence[Video], detector, gnn_params, gcfg: GraphBuildConfig, n_bins: int
) -> CalibrationMap:
    scores, labels = [], []
    for v, _, s in teacher_scores(labeled, detector, gnn_params, gcfg):
        scores.append(s)
        labels.append(node_labels(v))
    return fit_binning(np.concatenate(scores), np.concatenate(labels), n_bins)


# --------------------------------------------------------------- evaluation


def student_map(student: StudentParams, videos: Sequence[Video], gt_videos: Sequence[Video]) -> float:
    dets, gts = [], []
    for v, gv in zip(videos, gt_videos):
        p, res = student_predict(student, v)
        dets += video_dets(v, scores=p, centers=refined_boxes(v, res)[:, :2])
        gts += video_gts(gv)
    return mean_ap(dets, gts)


def teacher_auc(videos: Sequence[Video], gt_videos: Sequence[Video], detector, gnn_params, gcfg) -> float:
    scores = [s for _, _, s in teacher_scores(videos, detector, gnn_params, gcfg)]
    labels = [node_labels(gv) for gv in gt_videos]
    return roc_auc(np.concatenate(scores), np.concatenate(labels))


# --------------------------------------------------------------------- loop


def run_ssl(
    bench: Benchmark | str | Path,
    cfg: SslConfig = SslConfig(),
    gcfg: GraphBuildConfig = GraphBuildConfig(),
    out_dir: Optional[str | Path] = None,
    log: Optional[Callable[[str], None]] = None,
    on_iteration: Optional[Callable[[int, StudentParams, StudentParams, tgnn.GnnParams], None]] = None,
) -> list[IterationReport]:
    """Run the full loop; returns one report per completed iteration (0..iterations).

    Held-out metrics need the sealed ground truth and are ``None`` without it;
    training never reads it. ``on_iteration(it, student, detector, gnn_params)``
    is called after each report, for callers that need the models themselves.
    """
    if not isinstance(bench, Benchmark):
        bench = load_benchmark(bench)
    if not bench.labeled:
        raise ValueError("labeled split is empty")
    log = log or (lambda msg: None)
    held_gt = [bench.sealed(v.video_id) for v in bench.heldout] if bench.has_sealed() else None

    def report(it, student, detector, gnn_params, n_active, pls, s_hist, g_hist) -> IterationReport:
        us = [pl.uncertainty for _, ps in pls for pl in ps]
        r = IterationReport(
            iteration=it,
            student_map=student_map(student, bench.heldout, held_gt) if held_gt else None,
            gnn_auc=teacher_auc(bench.heldout, held_gt, detector, gnn_params, gcfg) if held_gt else None,
            n_active_unlabeled=n_active,
            n_pseudo_labels=len(us),
            mean_uncertainty=float(np.mean(us)) if us else None,
            student_loss=[float(x) for x in s_hist],
            gnn_loss=[float(x) for x in g_hist],
        )
        log(f"iteration {it}: mAP={r.student_map} AUC={r.gnn_auc} pseudo={r.n_pseudo_labels}")
        if on_iteration is not None:
            on_iteration(it, student, detector, gnn_params)
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / f"report_iter_{it}.json").write_text(r.to_json() + "\n")
        return r

    student, s_hist = train_student(bench.labeled, (), cfg.student_cfg(cfg.student_init_epochs, 0))
    detector = {k: v.copy() for k, v in student.items()}
    gnn_params, g_hist = tgnn.train_gnn(
        gnn_training_source(bench.labeled, detector, gcfg, cfg.augment, hash_seed(cfg.seed, 1, 0)),
        cfg.gnn_cfg(cfg.gnn_init_epochs, 1),
    )
    reports = [report(0, student, detector, gnn_params, 0, [], s_hist, g_hist)]

    order = make_rng(cfg.seed, 0x756E).permutation(len(bench.unlabeled))
    for it in range(1, cfg.iterations + 1):
        n_active = active_count(it, len(bench.unlabeled), cfg.unlabeled_fraction_per_iter)
        active = [bench.unlabeled[i] for i in order[:n_active]]
        pls = []
        if active:
            cal = fit_teacher_calibration(bench.labeled, detector, gnn_params, gcfg, cfg.n_bins)
            for v, g, s in teacher_scores(active, detector, gnn_params, gcfg):
                pls.append((v, make_pseudo_labels(v, g, s, cal)))
        student, s_hist = train_student(
            bench.labeled, pls, cfg.student_cfg(cfg.student_epochs, 10 * it), init=student
        )
        detector = ema_update(detector, student, cfg.ema_alpha)
        gnn_params, g_hist = tgnn.train_gnn(
            gnn_training_source(bench.labeled, detector, gcfg, cfg.augment, hash_seed(cfg.seed, 1, it)),
            cfg.gnn_cfg(cfg.gnn_epochs, 10 * it + 1),
            init=gnn_params,
        )
        reports.append(report(it, student, detector, gnn_params, n_active, pls, s_hist, g_hist))

    if out_dir is not None:
        write_summary(reports, Path(out_dir) / "summary.csv")
    return reports


def write_summary(reports: Sequence[IterationReport], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "student_map", "gnn_auc", "n_active_unlabeled", "n_pseudo_labels", "mean_uncertainty"])
        for r in reports:
            w.writerow([r.iteration, r.student_map, r.gnn_auc, r.n_active_unlabeled, r.n_pseudo_labels, r.mean_uncertainty])
