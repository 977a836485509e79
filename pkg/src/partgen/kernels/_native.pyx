# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled nearest-neighbor kernel.

Floating-point operation order matches the numpy fallback exactly
(per pair: ``(dx*dx + dy*dy) + dz*dz``, scan order j=0..m-1 with strict
``<`` comparison), so both lanes return bit-identical arrays.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel cimport prange

cnp.import_array()


def nn_sqdist(double[:, ::1] query, double[:, ::1] target):
    """For each query point, index and squared distance of its nearest
    target point. Ties resolve to the lowest target index."""
    cdef Py_ssize_t n = query.shape[0]
    cdef Py_ssize_t m = target.shape[0]
    idx_arr = np.empty(n, dtype=np.int64)
    sqd_arr = np.empty(n, dtype=np.float64)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] sqd = sqd_arr
    cdef Py_ssize_t i, j
    cdef double qx, qy, qz, dx, dy, dz, d, best
    cdef long long bj

    for i in prange(n, nogil=True, schedule="static"):
        qx = query[i, 0]
        qy = query[i, 1]
        qz = query[i, 2]
        best = -1.0
        bj = 0
        for j in range(m):
            dx = qx - target[j, 0]
            dy = qy - target[j, 1]
            dz = qz - target[j, 2]
            d = (dx * dx + dy * dy) + dz * dz
            if best < 0.0 or d < best:
                best = d
                bj = j
        idx[i] = bj
        sqd[i] = best
    return idx_arr, sqd_arr
