"""Kernel dispatch: compiled extension when built, numpy otherwise.

Set ``TGSSL_PURE_PYTHON=1`` to force the numpy path.
"""
import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("TGSSL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

radius_edges = _impl.radius_edges
segment_sum = _impl.segment_sum

__all__ = ["BACKEND", "radius_edges", "segment_sum"]
