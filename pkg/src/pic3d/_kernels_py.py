"""Pure numpy implementations of the point-set kernels.

Every function takes C-contiguous float64 ``(n, 3)`` arrays and mirrors the
compiled module in ``_kernels.pyx`` exactly, including tie-breaking, so the two
backends are interchangeable.
"""
import numpy as np

# rows of the pairwise distance matrix materialized at once
_CHUNK = 256


def _sqdist_rows(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]


def fps(points, k, start=0):
    n = points.shape[0]
    out = np.empty(k, dtype=np.int64)
    mind = np.full(n, np.inf)
    selected = np.zeros(n, dtype=bool)
    cur = start
    for i in range(k):
        out[i] = cur
        selected[cur] = True
        d = points - points[cur]
        d = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        np.minimum(mind, d, out=mind)
        if i + 1 < k:
            # already-selected slots can never win, even on duplicate points
            cur = int(np.argmax(np.where(selected, -1.0, mind)))
    return out


def knn(points, queries, m):
    q = queries.shape[0]
    out = np.empty((q, m), dtype=np.int64)
    for s in range(0, q, _CHUNK):
        d = _sqdist_rows(queries[s:s + _CHUNK], points)
        # stable sort keeps the lowest index first among equal distances
        out[s:s + _CHUNK] = np.argsort(d, axis=1, kind="stable")[:, :m]
    return out


def nearest(a, b):
    """For each row of ``a``: squared distance to, and index of, its nearest row in ``b``."""
    n = a.shape[0]
    dist = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    for s in range(0, n, _CHUNK):
        d = _sqdist_rows(a[s:s + _CHUNK], b)
        j = np.argmin(d, axis=1)
        idx[s:s + _CHUNK] = j
        dist[s:s + _CHUNK] = d[np.arange(d.shape[0]), j]
    return dist, idx
