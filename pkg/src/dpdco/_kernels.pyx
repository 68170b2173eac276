# distutils: language = c++
# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Mirrors ``_kernels_py`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libcpp.algorithm cimport sort
from libc.math cimport fabs

cnp.import_array()

BACKEND = "cython"

cdef inline double _clip(double z, double hi) noexcept nogil:
    if z <= 0.0:
        return 0.0
    if z >= hi:
        return hi
    return z


cdef double _scan_root(const double *x0, const double *a, double b, Py_ssize_t t,
                       double *lo, double *up) noexcept nogil:
    """Exact root of g(nu) = b by sorting the kinks and merge-scanning the pieces."""
    cdef Py_ssize_t i, il, iu = 0
    cdef double g = 0.0, g_next, cur, nxt
    for i in range(t):
        lo[i] = -x0[i]
        up[i] = a[i] - x0[i]
    sort(lo, lo + t)
    sort(up, up + t)
    # The slope between kinks is (#lower passed) - (#upper passed).
    cur = lo[0]
    il = 1
    while il < t or iu < t:
        if il < t and (iu >= t or lo[il] <= up[iu]):
            nxt = lo[il]
        else:
            nxt = up[iu]
        g_next = g + (il - iu) * (nxt - cur)
        if g_next >= b:
            return 0.5 * (cur + nxt)
        g = g_next
        cur = nxt
        if il < t and (iu >= t or lo[il] <= up[iu]):
            il += 1
        else:
            iu += 1
    return up[t - 1]


cdef void _project_one(const double *x0, const double *a, double b, double *out,
                       Py_ssize_t t, double *lo, double *up) noexcept nogil:
    cdef Py_ssize_t i
    cdef double cap_sum = 0.0, g = 0.0, nu, z, fixed, fr, resid, tot, nxt, lo_nu, hi_nu
    cdef int nint, it, found

    for i in range(t):
        cap_sum += a[i]
    if b <= 0.0:
        for i in range(t):
            out[i] = 0.0
        return
    if b >= cap_sum:
        for i in range(t):
            out[i] = a[i]
        return

    # Safeguarded Newton on the piecewise-linear, nondecreasing g(nu) = sum(clip(x0 + nu, 0, a)).
    # Each step lands on the linear extension of the current piece, so it terminates
    # once the active set settles; the bracket keeps it from cycling across kinks.
    lo_nu = -x0[0]
    hi_nu = a[0] - x0[0]
    fr = 0.0
    for i in range(t):
        if -x0[i] < lo_nu:
            lo_nu = -x0[i]
        if a[i] - x0[i] > hi_nu:
            hi_nu = a[i] - x0[i]
        fr += x0[i]
    nu = (b - fr) / t
    if not (lo_nu < nu < hi_nu):
        nu = 0.5 * (lo_nu + hi_nu)
    found = 0
    for it in range(64):
        g = 0.0
        nint = 0
        for i in range(t):
            z = x0[i] + nu
            if z >= a[i]:
                g += a[i]
            elif z > 0.0:
                g += z
                nint += 1
        if fabs(b - g) <= 1e-13 * (b if b > 1.0 else 1.0):
            found = 1
            break
        if g < b:
            lo_nu = nu
        else:
            hi_nu = nu
        if nint > 0:
            nxt = nu + (b - g) / nint
        else:
            nxt = 0.5 * (lo_nu + hi_nu)
        if not (lo_nu < nxt < hi_nu):
            nxt = 0.5 * (lo_nu + hi_nu)
        if nxt == nu or hi_nu - lo_nu <= 1e-15 * (fabs(nu) + 1.0):
            found = 1
            break
        nu = nxt
    if not found:
        nu = _scan_root(x0, a, b, t, lo, up)

    for it in range(4):
        nint = 0
        fixed = 0.0
        fr = 0.0
        for i in range(t):
            z = x0[i] + nu
            if z >= a[i]:
                fixed += a[i]
            elif z > 0.0:
                nint += 1
                fr += x0[i]
        if nint > 0:
            nu = (b - fixed - fr) / nint
        tot = 0.0
        for i in range(t):
            out[i] = _clip(x0[i] + nu, a[i])
            tot += out[i]
        resid = b - tot
        if fabs(resid) <= 1e-13 * (b if b > 1.0 else 1.0):
            return
        nu += resid / (nint if nint > 0 else 1)


def project_rows(x0, a, b, out=None):
    """Project every row of ``x0`` onto ``{x : 0 <= x <= a_row, sum(x) = b_row}``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] cx0 = np.ascontiguousarray(x0, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] ca = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] cb = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = cx0.shape[0], t = cx0.shape[1], r
    if out is None:
        out = np.empty((n, t), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] cout = out
    if n == 0 or t == 0:
        return out
    cdef double *work = <double *> malloc(2 * t * sizeof(double))
    if work == NULL:
        raise MemoryError()
    try:
        with nogil:
            for r in range(n):
                _project_one(&cx0[r, 0], &ca[r, 0], cb[r], &cout[r, 0], t, work, work + t)
    finally:
        free(work)
    return out
