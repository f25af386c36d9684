"""Histogram-binning calibration and entropy uncertainty."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import write_text


@dataclass(frozen=True, eq=False)
class CalibrationMap:
    """Equal-width bins (a_m, a_{m+1}]; the first bin also holds 0."""

    boundaries: np.ndarray
    theta: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.theta)

    def bin_index(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=float)
        return np.clip(np.searchsorted(self.boundaries, s, side="left") - 1, 0, self.n_bins - 1)

    def to_dict(self) -> dict:
        return {"boundaries": self.boundaries.tolist(), "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationMap":
        return cls(np.asarray(d["boundaries"], dtype=float), np.asarray(d["theta"], dtype=float))

    def save(self, path: str | Path) -> None:
        write_text(path, json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationMap":
        return cls.from_dict(json.loads(Path(path).read_text()))


def uniform_boundaries(n_bins: int) -> np.ndarray:
    return np.arange(n_bins + 1, dtype=float) / n_bins


def _check_scores(s: np.ndarray) -> None:
    if np.any(~np.isfinite(s)) or np.any(s < 0.0) or np.any(s > 1.0):
        raise ValueError("scores must lie in [0, 1]")


def fit_binning(scores, labels, n_bins: int = 10) -> CalibrationMap:
    """Per-bin positive fraction; empty bins fall back to the bin midpoint."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    if s.shape != y.shape:
        raise ValueError(f"{len(s)} scores but {len(y)} labels")
    if s.size == 0:
        raise ValueError("cannot fit calibration on empty input")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    _check_scores(s)
    bounds = uniform_boundaries(n_bins)
    cmap = CalibrationMap(bounds, np.zeros(n_bins))
    idx = cmap.bin_index(s)
    count = np.bincount(idx, minlength=n_bins)
    pos = np.bincount(idx, weights=y, minlength=n_bins)
    mid = 0.5 * (bounds[:-1] + bounds[1:])
    theta = np.where(count > 0, pos / np.maximum(count, 1), mid)
    return CalibrationMap(bounds, theta)


def apply_binning(cmap: CalibrationMap, score):
    """Calibrated score for a scalar or array of raw scores."""
    s = np.asarray(score, dtype=float)
    _check_scores(s.reshape(-1))
    out = cmap.theta[cmap.bin_index(s)]
    return float(out) if out.ndim == 0 else out


def binning_objective(cmap: CalibrationMap, scores, labels) -> float:
    """Bin-wise squared error between calibrated scores and labels."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    return float(((cmap.theta[cmap.bin_index(s)] - y) ** 2).sum())


def entropy_uncertainty(s_hat):
    """Binary entropy in bits, with 0 log 0 = 0."""
    s = np.asarray(s_hat, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s < 0.0) or np.any(s > 1.0):
        raise ValueError("calibrated score must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(s > 0.0, -s * np.log2(np.where(s > 0.0, s, 1.0)), 0.0)
        b = np.where(s < 1.0, -(1.0 - s) * np.log2(np.where(s < 1.0, 1.0 - s, 1.0)), 0.0)
    u = a + b
    return float(u) if u.ndim == 0 else u


def ece(scores, labels, n_bins: int = 10, bin_by=None) -> float:
    """Expected calibration error over equal-width bins.

    Samples are binned by ``bin_by`` when given (e.g. the raw scores a
    calibration map was fitted on) and by ``scores`` otherwise.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    if s.size == 0:
        raise ValueError("cannot compute ECE on empty input")
    if s.shape != y.shape:
        raise ValueError(f"{len(s)} scores but {len(y)} labels")
    key = s if bin_by is None else np.asarray(bin_by, dtype=float)
    idx = CalibrationMap(uniform_boundaries(n_bins), np.zeros(n_bins)).bin_index(key)
    count = np.bincount(idx, minlength=n_bins)
    # shifted mean: exact when every confidence in a bin is identical
    ref = np.zeros(n_bins)
    ref[idx[::-1]] = s[::-1]
    conf = ref + np.bincount(idx, weights=s - ref[idx], minlength=n_bins) / np.maximum(count, 1)
    acc = np.bincount(idx, weights=y, minlength=n_bins) / np.maximum(count, 1)
    nz = count > 0
    return float((count[nz] / s.size * np.abs(acc[nz] - conf[nz])).sum())
