"""Backend selection for the point-set kernels.

The compiled extension is used when it imported cleanly; set ``PIC_PURE_PYTHON=1``
to force the numpy fallback. Both backends stay importable so tests and the
benchmark can compare them directly.
"""
import logging
import os

import numpy as np

from pic3d import _kernels_py as python_impl

log = logging.getLogger(__name__)

try:
    from pic3d import _kernels as cython_impl
except ImportError:  # extension not built
    cython_impl = None

if cython_impl is not None and os.environ.get("PIC_PURE_PYTHON", "") not in ("1", "true"):
    _impl = cython_impl
    BACKEND = "cython"
else:
    _impl = python_impl
    BACKEND = "python"
log.debug("point kernels backend: %s", BACKEND)


def _as_points(x):
    return np.ascontiguousarray(x, dtype=np.float64).reshape(-1, 3)


def fps(points, k, start=0):
    return _impl.fps(_as_points(points), int(k), int(start))


def knn(points, queries, m):
    return _impl.knn(_as_points(points), _as_points(queries), int(m))


def nearest(a, b):
    return _impl.nearest(_as_points(a), _as_points(b))
