"""Command-line entry point: ``tgssl <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import tgnn
from .baselines import flicker_rescore
from .calibrate import CalibrationMap, fit_binning
from .core import load_video, save_video
from .evalmetrics import evaluate, write_metrics
from .graphbuild import GraphBuildConfig, attach_labels, build_graph, load_graph, save_graph
from .pipeline import SslConfig, gnn_training_source, load_benchmark, refine, run_ssl, teacher_view
from .simworld import WorldConfig, make_benchmark
from .ssloss import (
    LossConfig,
    StudentConfig,
    load_pseudo_labels,
    make_pseudo_labels,
    rescore_video,
    save_pseudo_labels,
    train_student,
)

log = logging.getLogger("tgssl")


def _videos_in(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(d.glob("*.jsonl"))


def _read_vector(path: str | Path) -> np.ndarray:
    """A JSON array or whitespace-separated numbers."""
    text = Path(path).read_text()
    if text.lstrip().startswith("["):
        return np.asarray(json.loads(text), dtype=float)
    return np.loadtxt(path, dtype=float, ndmin=1)


def cmd_simulate(a) -> None:
    cfg = WorldConfig.from_dict(json.loads(Path(a.config).read_text())) if a.config else WorldConfig()
    cfg = WorldConfig.from_dict({**cfg.to_dict(), "seed": a.seed})
    manifest = make_benchmark(a.out, a.labeled, a.unlabeled, a.heldout, cfg)
    log.info("wrote %d videos to %s", sum(len(v) for v in manifest["splits"].values()), a.out)


def cmd_build_graph(a) -> None:
    video = load_video(a.video)
    g = build_graph(video, GraphBuildConfig(a.threshold, a.radius, reversed_projection=a.reversed_projection))
    if video.labeled:
        g = attach_labels(g, video)
    save_graph(g, a.out)
    log.info("%s: %d nodes, %d edges", video.video_id, g.n_nodes, g.n_edges)


def cmd_train_gnn(a) -> None:
    if a.videos:
        videos = [load_video(p) for p in _videos_in(a.videos)]
        if not videos:
            raise FileNotFoundError(f"no video files in {a.videos}")
        source = gnn_training_source(videos, None, GraphBuildConfig(), a.augment == "on", a.seed)
    else:
        if a.augment == "on":
            raise ValueError("--augment on needs --videos (augmentation operates on labeled videos)")
        paths = sorted(Path(a.graphs).glob("*.json"))
        if not paths:
            raise FileNotFoundError(f"no graph files in {a.graphs}")
        source = [load_graph(p) for p in paths]
        if any(g.labels is None for g in source):
            raise ValueError("training graphs must carry labels (build them from labeled videos)")
    cfg = tgnn.TrainConfig(learning_rate=a.lr, batch_videos=a.batch_videos, epochs=a.epochs, seed=a.seed)
    init = tgnn.load_params(a.init) if a.init else None
    params, hist = tgnn.train_gnn(source, cfg, init)
    tgnn.save_params(params, a.out)
    if hist:
        log.info("final epoch loss %.6f", hist[-1])


def cmd_calibrate(a) -> None:
    cmap = fit_binning(_read_vector(a.scores), _read_vector(a.labels), a.bins)
    cmap.save(a.out)


def cmd_pseudo_label(a) -> None:
    params = tgnn.load_params(a.gnn)
    cal = CalibrationMap.load(a.calibration)
    detector = tgnn.load_params(a.detector) if a.detector else None
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in _videos_in(a.videos):
        video = load_video(p).strip_gt()
        view = teacher_view(video, detector)
        g = build_graph(view)
        s = tgnn.gnn_forward(g, params)
        save_video(video, out / p.name)
        save_pseudo_labels(make_pseudo_labels(video, g, s, cal), out / f"{p.stem}.pseudo.json")


def cmd_train_student(a) -> None:
    labeled = [load_video(p) for p in _videos_in(a.labeled)]
    pseudo = []
    if a.pseudo:
        for p in _videos_in(a.pseudo):
            v = load_video(p)
            pseudo.append((v, load_pseudo_labels(p.with_name(f"{p.stem}.pseudo.json"), v)))
    cfg = StudentConfig(
        learning_rate=a.lr,
        epochs=a.epochs,
        loss=LossConfig(k=a.k, regression_weight_mode=a.reg_mode),
        use_uncertainty=not a.no_uncertainty,
        seed=a.seed,
    )
    init = tgnn.load_params(a.init) if a.init else None
    params, hist = train_student(labeled, pseudo, cfg, init)
    tgnn.save_params(params, a.out)
    if hist:
        log.info("final epoch loss %.6f", hist[-1])


def cmd_rescore(a) -> None:
    student = tgnn.load_params(a.student)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in _videos_in(a.videos):
        v = rescore_video(student, load_video(p))
        if a.gnn:
            v = refine(v, tgnn.load_params(a.gnn), CalibrationMap.load(a.calibration) if a.calibration else None)
        save_video(v, out / p.name)


def cmd_baseline_flicker(a) -> None:
    save_video(flicker_rescore(load_video(a.video), a.radius, a.threshold), a.out)


def cmd_eval(a) -> None:
    gt_dir = Path(a.gt)
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"ground-truth directory not found: {gt_dir}")
    preds = [load_video(p) for p in _videos_in(a.pred)]
    if not preds:
        raise FileNotFoundError(f"no prediction files in {a.pred}")
    gts = []
    for v in preds:
        path = gt_dir / f"{v.video_id}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"ground truth missing for {v.video_id}: {path}")
        gts.append(load_video(path))
    metrics = evaluate(preds, gts)
    write_metrics(metrics, a.out)
    log.info("mAP %s  AUC %s  ECE %s", metrics["map"], metrics["auc"], metrics["ece"])


def cmd_run_ssl(a) -> None:
    cfg = SslConfig(
        ema_alpha=a.ema_alpha,
        iterations=a.iterations,
        k=a.k,
        reg_mode=a.reg_mode,
        use_uncertainty=not a.no_uncertainty,
        augment=not a.no_augment,
        seed=a.seed,
    )
    run_ssl(load_benchmark(a.manifest), cfg, out_dir=a.out_dir, log=log.info)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tgssl", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--labeled", type=int, default=10)
    p.add_argument("--unlabeled", type=int, default=50)
    p.add_argument("--heldout", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with WorldConfig fields")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("build-graph", help="temporal graph of one video")
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=10.0)
    p.add_argument("--radius", type=int, default=4)
    p.add_argument("--reversed-projection", action="store_true", help="use the reversed-sign projection")
    p.set_defaults(fn=cmd_build_graph)

    p = sub.add_parser("train-gnn", help="train the rescoring GNN on labeled graphs")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--graphs", help="directory of labeled graph JSON files")
    src.add_argument("--videos", help="directory of labeled videos (graphs built per epoch)")
    p.add_argument("--augment", choices=("on", "off"), default="off")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-videos", type=int, default=tgnn.TrainConfig.batch_videos)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", help="start from these parameters")
    p.set_defaults(fn=cmd_train_gnn)

    p = sub.add_parser("calibrate", help="fit histogram binning")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("pseudo-label", help="teacher pseudo labels for a directory of videos")
    p.add_argument("--videos", required=True)
    p.add_argument("--gnn", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--detector", help="student parameters used as the teacher detector")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pseudo_label)

    p = sub.add_parser("train-student", help="train the single-frame student")
    p.add_argument("--labeled", required=True)
    p.add_argument("--pseudo")
    p.add_argument("--k", type=float, default=2.0)
    p.add_argument("--reg-mode", choices=("as_written", "inverse"), default="as_written")
    p.add_argument("--no-uncertainty", action="store_true")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_student)

    p = sub.add_parser("rescore", help="apply a student (and optionally the GNN) to videos")
    p.add_argument("--student", required=True)
    p.add_argument("--videos", required=True)
    p.add_argument("--gnn")
    p.add_argument("--calibration")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rescore)

    p = sub.add_parser("baseline-flicker", help="flicker rescoring of one video")
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=int, default=4)
    p.add_argument("--threshold", type=float, default=10.0)
    p.set_defaults(fn=cmd_baseline_flicker)

    p = sub.add_parser("eval", help="AP / mAP / AUC / ECE against sealed ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run-ssl", help="full semi-supervised loop")
    p.add_argument("--manifest", required=True)
    p.add_argument("--iterations", type=int, default=2)
    p.add_argument("--ema-alpha", type=float, default=0.1)
    p.add_argument("--k", type=float, default=2.0)
    p.add_argument("--reg-mode", choices=("as_written", "inverse"), default="as_written")
    p.add_argument("--no-uncertainty", action="store_true")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_run_ssl)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.fn(args)
    except (OSError, ValueError) as exc:
        print(f"tgssl {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
