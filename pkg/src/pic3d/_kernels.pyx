# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled point-set kernels. Same contracts as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef inline double _sq(const double[:, ::1] a, Py_ssize_t i,
                       const double[:, ::1] b, Py_ssize_t j) noexcept nogil:
    cdef double dx = a[i, 0] - b[j, 0]
    cdef double dy = a[i, 1] - b[j, 1]
    cdef double dz = a[i, 2] - b[j, 2]
    return dx * dx + dy * dy + dz * dz


def fps(const double[:, ::1] points, Py_ssize_t k, Py_ssize_t start=0):
    cdef Py_ssize_t n = points.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_arr = np.empty(k, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef double[::1] mind = np.full(n, INFINITY)
    cdef unsigned char[::1] selected = np.zeros(n, dtype=np.uint8)
    cdef Py_ssize_t i, j, cur = start, best
    cdef double d, bestd
    with nogil:
        for i in range(k):
            out[i] = cur
            selected[cur] = 1
            best = -1
            bestd = -1.0
            for j in range(n):
                d = _sq(points, j, points, cur)
                if d < mind[j]:
                    mind[j] = d
                if not selected[j] and mind[j] > bestd:
                    bestd = mind[j]
                    best = j
            cur = best
    return out_arr


def knn(const double[:, ::1] points, const double[:, ::1] queries, Py_ssize_t m):
    cdef Py_ssize_t n = points.shape[0], q = queries.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out_arr = np.empty((q, m), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef double[::1] bd = np.empty(m)
    cdef Py_ssize_t s, j, pos, filled
    cdef double d
    with nogil:
        for s in range(q):
            filled = 0
            for j in range(n):
                d = _sq(queries, s, points, j)
                # j grows monotonically, so strict < keeps lower indices ahead on ties
                if filled == m and d >= bd[m - 1]:
                    continue
                pos = filled if filled < m else m - 1
                while pos > 0 and bd[pos - 1] > d:
                    bd[pos] = bd[pos - 1]
                    out[s, pos] = out[s, pos - 1]
                    pos -= 1
                bd[pos] = d
                out[s, pos] = j
                if filled < m:
                    filled += 1
    return out_arr


def nearest(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist_arr = np.empty(n)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] dist = dist_arr
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef Py_ssize_t i, j, best
    cdef double d, bestd
    with nogil:
        for i in range(n):
            bestd = INFINITY
            best = 0
            for j in range(m):
                d = _sq(a, i, b, j)
                if d < bestd:
                    bestd = d
                    best = j
            dist[i] = bestd
            idx[i] = best
    return dist_arr, idx_arr
