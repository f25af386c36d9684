"""Four-layer message-passing network that rescores graph nodes.

Layer k computes, for every edge j -> i,

    m_ji = relu([h_i, h_j, e_ji] @ phi_W + phi_b)

averages the messages arriving at i (zero when i has no in-edges) and updates

    h_i' = act([h_i, mean_j m_ji] @ gam_W + gam_b)

with ``act`` = relu for hidden layers and sigmoid on the last, whose single
output is the refined detection score. Gradients are derived by hand for this
fixed architecture.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .core import make_rng, write_text
from .graphbuild import EDGE_DIM, NODE_DIM, VideoGraph

N_LAYERS = 4
WIDTH = 8

GnnParams = dict  # name -> np.ndarray


def layer_dims(k: int) -> tuple[int, int, int]:
    """(input node dim, message dim, output dim) of layer k (1-based)."""
    d_in = NODE_DIM if k == 1 else WIDTH
    d_out = 1 if k == N_LAYERS else WIDTH
    return d_in, WIDTH, d_out


def param_shapes() -> dict[str, tuple[int, ...]]:
    shapes = {}
    for k in range(1, N_LAYERS + 1):
        d_in, d_msg, d_out = layer_dims(k)
        shapes[f"phi{k}_W"] = (2 * d_in + EDGE_DIM, d_msg)
        shapes[f"phi{k}_b"] = (d_msg,)
        shapes[f"gam{k}_W"] = (d_in + d_msg, d_out)
        shapes[f"gam{k}_b"] = (d_out,)
    return shapes


def check_params(params: GnnParams) -> None:
    shapes = param_shapes()
    if set(params) != set(shapes):
        raise ValueError(f"parameter names {sorted(params)} != {sorted(shapes)}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: shape {params[name].shape}, expected {shape}")


def init_params(seed: int = 0) -> GnnParams:
    """Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases."""
    rng = make_rng(seed, 0x6E6E)
    out = {}
    for name, shape in param_shapes().items():
        if name.endswith("_W"):
            bound = math.sqrt(6.0 / shape[0])
            out[name] = rng.uniform(-bound, bound, shape)
        else:
            out[name] = np.zeros(shape)
    return out


def copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def params_to_json(params: dict) -> str:
    return json.dumps({k: params[k].tolist() for k in sorted(params)})


def params_from_json(text: str) -> dict:
    return {k: np.asarray(v, dtype=float) for k, v in json.loads(text).items()}


def save_params(params: dict, path: str | Path) -> None:
    write_text(path, params_to_json(params) + "\n")


def load_params(path: str | Path) -> dict:
    return params_from_json(Path(path).read_text())


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def _relu(z):
    return np.maximum(z, 0.0)


@dataclass
class ForwardCache:
    graph: VideoGraph
    params: GnnParams
    layers: list
    inv_deg: np.ndarray
    logits: np.ndarray
    scores: np.ndarray


def gnn_forward(graph: VideoGraph, params: GnnParams, return_cache: bool = False):
    """Refined score in (0, 1) for every node; optionally the backward cache."""
    check_params(params)
    n = graph.n_nodes
    src, dst, e = graph.src, graph.dst, graph.edge_attr
    deg = np.bincount(dst, minlength=n).astype(float)
    inv_deg = 1.0 / np.maximum(deg, 1.0)
    h = graph.x
    layers = []
    for k in range(1, N_LAYERS + 1):
        inp = np.concatenate([h[dst], h[src], e], axis=1)
        zm = inp @ params[f"phi{k}_W"] + params[f"phi{k}_b"]
        m = _relu(zm)
        agg = kernels.segment_sum(m, dst, n) * inv_deg[:, None]
        u = np.concatenate([h, agg], axis=1)
        zu = u @ params[f"gam{k}_W"] + params[f"gam{k}_b"]
        layers.append((inp, zm, u, zu))
        h = _relu(zu) if k < N_LAYERS else zu
    logits = h[:, 0]
    scores = sigmoid(logits)
    if return_cache:
        return scores, ForwardCache(graph, params, layers, inv_deg, logits, scores)
    return scores


def gnn_backward(cache: Optional[ForwardCache], upstream, wrt: str = "score") -> GnnParams:
    """Parameter gradients given dL/d(output) per node.

    ``wrt="score"`` takes gradients w.r.t. the sigmoid outputs, ``wrt="logit"``
    w.r.t. the pre-sigmoid logits (numerically preferable for BCE).
    """
    if cache is None:
        raise ValueError("gnn_backward needs the cache from gnn_forward(..., return_cache=True)")
    g = cache.graph
    n, src, dst = g.n_nodes, g.src, g.dst
    p = cache.params
    up = np.asarray(upstream, dtype=float)
    dz = up * cache.scores * (1.0 - cache.scores) if wrt == "score" else up
    dzu = dz[:, None]
    grads = {}
    for k in range(N_LAYERS, 0, -1):
        inp, zm, u, zu = cache.layers[k - 1]
        d_in = layer_dims(k)[0]
        grads[f"gam{k}_W"] = u.T @ dzu
        grads[f"gam{k}_b"] = dzu.sum(axis=0)
        du = dzu @ p[f"gam{k}_W"].T
        dh = du[:, :d_in].copy()
        dm = (du[:, d_in:] * cache.inv_deg[:, None])[dst]
        dzm = dm * (zm > 0.0)
        grads[f"phi{k}_W"] = inp.T @ dzm
        grads[f"phi{k}_b"] = dzm.sum(axis=0)
        if k > 1:
            dinp = dzm @ p[f"phi{k}_W"].T
            dh += kernels.segment_sum(dinp[:, :d_in], dst, n)
            dh += kernels.segment_sum(dinp[:, d_in : 2 * d_in], src, n)
            zu_prev = cache.layers[k - 2][3]
            dzu = dh * (zu_prev > 0.0)
    return grads


def bce_with_logits(logits, labels) -> np.ndarray:
    """Per-node binary cross entropy computed from logits."""
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    return np.logaddexp(0.0, z) - y * z


class Adam:
    """Adam over a dict of arrays; updates parameters in place."""

    def __init__(self, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name in sorted(params):
            g = grads[name]
            m = self.m.get(name, 0.0) * b1 + (1.0 - b1) * g
            v = self.v.get(name, 0.0) * b2 + (1.0 - b2) * g * g
            self.m[name], self.v[name] = m, v
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_videos: int = 50
    epochs: int = 50
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_videos < 1 or self.epochs < 0:
            raise ValueError("batch_videos >= 1 and epochs >= 0 required")


def batch_loss_and_grad(graphs: Sequence[VideoGraph], params: GnnParams) -> tuple[float, GnnParams, int]:
    """Mean node BCE over ``graphs`` and its gradient."""
    n_total = sum(g.n_nodes for g in graphs)
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    loss = 0.0
    if n_total == 0:
        return 0.0, grads, 0
    for g in graphs:
        if g.n_nodes == 0:
            continue
        if g.labels is None:
            raise ValueError(f"graph {g.video_id} carries no labels")
        _, cache = gnn_forward(g, params, return_cache=True)
        loss += float(bce_with_logits(cache.logits, g.labels).sum())
        dz = (cache.scores - g.labels) / n_total
        for k, v in gnn_backward(cache, dz, wrt="logit").items():
            grads[k] += v
    return loss / n_total, grads, n_total


def train_gnn(
    graphs: Sequence[VideoGraph] | Callable[[int], Sequence[VideoGraph]],
    cfg: TrainConfig = TrainConfig(),
    init: Optional[GnnParams] = None,
) -> tuple[GnnParams, list[float]]:
    """Minimise mean node BCE with Adam.

    ``graphs`` is either a fixed list or a callable returning the (for instance
    freshly augmented) graphs of a given epoch. Returns the trained parameters
    and the node-weighted mean loss of each epoch.
    """
    source = graphs if callable(graphs) else (lambda _epoch: graphs)
    if not callable(graphs) and len(graphs) == 0:
        raise ValueError("empty training set")
    params = copy_params(init) if init is not None else init_params(cfg.seed)
    check_params(params)
    opt = Adam(cfg.learning_rate, cfg.betas)
    history = []
    for epoch in range(cfg.epochs):
        epoch_graphs = list(source(epoch))
        if not epoch_graphs:
            raise ValueError("empty training set")
        order = make_rng(cfg.seed, 0x7472, epoch).permutation(len(epoch_graphs))
        tot_loss, tot_n = 0.0, 0
        for s in range(0, len(order), cfg.batch_videos):
            batch = [epoch_graphs[i] for i in order[s : s + cfg.batch_videos]]
            loss, grads, n = batch_loss_and_grad(batch, params)
            if n == 0:
                continue
            opt.step(params, grads)
            tot_loss += loss * n
            tot_n += n
        history.append(tot_loss / max(tot_n, 1))
    return params, history
