# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: Bernoulli weights and the tridiagonal sweep."""

import numpy as np
cimport numpy as cnp
from libc.math cimport expm1, fabs

from sgcorrosion._core._errors import PivotError

cnp.import_array()

# Below this magnitude x / expm1(x) is replaced by its Taylor polynomial.
cdef double TAYLOR_CUTOFF = 1e-5


cdef inline double _bern(double x) nogil:
    cdef double x2
    if fabs(x) < TAYLOR_CUTOFF:
        x2 = x * x
        return 1.0 - 0.5 * x + x2 / 12.0 - x2 * x2 / 720.0
    return x / expm1(x)


def bernoulli_array(const double[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _bern(x[i])
    return out


def thomas(const double[::1] sub, const double[::1] diag,
           const double[::1] sup, const double[::1] rhs):
    """Solve the tridiagonal system; ``sub[0]`` and ``sup[n-1]`` are ignored."""
    cdef Py_ssize_t i, n = diag.shape[0]
    cdef Py_ssize_t bad = -1
    cdef double denom
    cp_arr = np.empty(n, dtype=np.float64)
    x_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] cp = cp_arr
    cdef double[::1] x = x_arr
    with nogil:
        denom = diag[0]
        if denom == 0.0:
            bad = 0
        else:
            cp[0] = sup[0] / denom if n > 1 else 0.0
            x[0] = rhs[0] / denom
            for i in range(1, n):
                denom = diag[i] - sub[i] * cp[i - 1]
                if denom == 0.0:
                    bad = i
                    break
                cp[i] = sup[i] / denom if i < n - 1 else 0.0
                x[i] = (rhs[i] - sub[i] * x[i - 1]) / denom
            if bad < 0:
                for i in range(n - 2, -1, -1):
                    x[i] = x[i] - cp[i] * x[i + 1]
    if bad >= 0:
        raise PivotError(bad)
    return x_arr
