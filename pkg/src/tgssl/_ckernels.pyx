# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the graph kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def radius_edges(frame, t, xy, vel, int radius, double threshold, double sign=1.0):
    cdef const cnp.int64_t[:] fr = np.ascontiguousarray(frame, dtype=np.int64)
    cdef const double[:] tt = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[:, :] p = np.ascontiguousarray(xy, dtype=np.float64)
    cdef const double[:, :] v = np.ascontiguousarray(vel, dtype=np.float64)
    cdef Py_ssize_t n = fr.shape[0]
    cdef Py_ssize_t i, j, m = 0, cap = 64
    cdef double dt, ax, ay, bx, by, dab, dba
    src = np.empty(cap, dtype=np.int64)
    dst = np.empty(cap, dtype=np.int64)
    dist = np.empty(cap, dtype=np.float64)
    cdef cnp.int64_t[:] s_v = src
    cdef cnp.int64_t[:] d_v = dst
    cdef double[:] w_v = dist
    for i in range(n):
        j = i + 1
        while j < n and fr[j] == fr[i]:
            j += 1
        while j < n and fr[j] - fr[i] <= radius:
            dt = tt[j] - tt[i]
            ax = p[i, 0] + sign * v[i, 0] * dt - p[j, 0]
            ay = p[i, 1] + sign * v[i, 1] * dt - p[j, 1]
            bx = p[j, 0] - sign * v[j, 0] * dt - p[i, 0]
            by = p[j, 1] - sign * v[j, 1] * dt - p[i, 1]
            dab = sqrt(ax * ax + ay * ay)
            dba = sqrt(bx * bx + by * by)
            if dab < threshold or dba < threshold:
                if m + 2 > cap:
                    cap *= 2
                    src = np.resize(src, cap)
                    dst = np.resize(dst, cap)
                    dist = np.resize(dist, cap)
                    s_v = src
                    d_v = dst
                    w_v = dist
                s_v[m] = i
                d_v[m] = j
                w_v[m] = dab
                s_v[m + 1] = j
                d_v[m + 1] = i
                w_v[m + 1] = dba
                m += 2
            j += 1
    src = src[:m]
    dst = dst[:m]
    dist = dist[:m]
    order = np.lexsort((src, dst))
    return src[order], dst[order], dist[order]


def segment_sum(values, seg, Py_ssize_t n):
    cdef const double[:, :] x = np.ascontiguousarray(values, dtype=np.float64)
    cdef const cnp.int64_t[:] s = np.ascontiguousarray(seg, dtype=np.int64)
    out = np.zeros((n, x.shape[1]), dtype=np.float64)
    cdef double[:, :] o = out
    cdef Py_ssize_t e, k, d = x.shape[1]
    for e in range(x.shape[0]):
        for k in range(d):
            o[s[e], k] += x[e, k]
    return out
