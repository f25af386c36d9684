"""Pure numpy implementations of the hot kernels.

Results must match ``_ckernels`` bit for bit: both emit edges sorted by
(dst, src) and accumulate segment sums sequentially in edge order.
"""
from __future__ import annotations

import numpy as np


def radius_edges(frame, t, xy, vel, radius, threshold, sign=1.0):
    """Velocity-projected temporal neighbours.

    Nodes must be sorted by ``frame``. The pair (i, j) with
    ``1 <= |frame[j] - frame[i]| <= radius`` is connected when either
    endpoint's projection into the other's frame lands closer than
    ``threshold`` to it. Both directions are returned; ``dist[e]`` is measured
    from the projection of ``src[e]``.
    """
    frame = np.asarray(frame, dtype=np.int64)
    n = len(frame)
    if n == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    frames, starts = np.unique(frame, return_index=True)
    ends = np.append(starts[1:], n)
    span = {int(f): (int(s), int(e)) for f, s, e in zip(frames, starts, ends)}
    src_l, dst_l, dist_l = [], [], []
    for f in frames:
        a0, a1 = span[int(f)]
        for k in range(1, radius + 1):
            if int(f) + k not in span:
                continue
            b0, b1 = span[int(f) + k]
            ia = np.arange(a0, a1)
            ib = np.arange(b0, b1)
            dt = t[ib][None, :] - t[ia][:, None]
            # a projected forward into b's frame, b projected back into a's
            pa = xy[ia][:, None, :] + sign * vel[ia][:, None, :] * dt[..., None]
            pb = xy[ib][None, :, :] - sign * vel[ib][None, :, :] * dt[..., None]
            d_ab = np.sqrt(((pa - xy[ib][None, :, :]) ** 2).sum(-1))
            d_ba = np.sqrt(((pb - xy[ia][:, None, :]) ** 2).sum(-1))
            keep = (d_ab < threshold) | (d_ba < threshold)
            r, c = np.nonzero(keep)
            src_l += [ia[r], ib[c]]
            dst_l += [ib[c], ia[r]]
            dist_l += [d_ab[r, c], d_ba[r, c]]
    if not src_l:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    src = np.concatenate(src_l)
    dst = np.concatenate(dst_l)
    dist = np.concatenate(dist_l)
    order = np.lexsort((src, dst))
    return src[order], dst[order], dist[order]


def segment_sum(values, seg, n):
    """Row sums of ``values`` grouped by ``seg`` into ``n`` buckets."""
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((n, values.shape[1]), dtype=np.float64)
    np.add.at(out, np.asarray(seg, dtype=np.int64), values)
    return out
