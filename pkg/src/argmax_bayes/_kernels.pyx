# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: B-spline basis rows and local linear smoothing."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, NAN

cnp.import_array()

cdef enum:
    MAX_ORDER = 32
    MAX_P = 8


cdef Py_ssize_t _find_span(const double[:] knots, Py_ssize_t degree,
                           Py_ssize_t n_basis, double x) nogil:
    cdef Py_ssize_t lo = degree, hi = n_basis, mid
    if x >= knots[n_basis]:
        return n_basis - 1
    if x <= knots[degree]:
        return degree
    # invariant: knots[lo] <= x < knots[hi]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if x < knots[mid]:
            hi = mid
        else:
            lo = mid
    return lo


def basis_matrix(knots, int order, x):
    cdef const double[:] t = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[:] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t n_basis = t.shape[0] - order
    cdef Py_ssize_t degree = order - 1
    if order < 1 or order > MAX_ORDER:
        raise ValueError("order out of supported range")
    out_arr = np.zeros((n, n_basis), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef double vals[MAX_ORDER]
    cdef double left[MAX_ORDER]
    cdef double right[MAX_ORDER]
    cdef double saved, temp, xi
    cdef Py_ssize_t i, j, r, span
    with nogil:
        for i in range(n):
            xi = xv[i]
            span = _find_span(t, degree, n_basis, xi)
            vals[0] = 1.0
            for j in range(1, order):
                left[j] = xi - t[span + 1 - j]
                right[j] = t[span + j] - xi
                saved = 0.0
                for r in range(j):
                    temp = vals[r] / (right[r + 1] + left[j - r])
                    vals[r] = saved + right[r + 1] * temp
                    saved = left[j - r] * temp
                vals[j] = saved
            for j in range(order):
                out[i, span - degree + j] = vals[j]
    return out_arr


cdef int _chol_solve(double* a, double* b, Py_ssize_t p) nogil:
    """Solve a x = b in place (a SPD, row-major p x p). Returns 0 on success."""
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(p):
        s = a[j * p + j]
        for k in range(j):
            s -= a[j * p + k] * a[j * p + k]
        if s <= 0.0:
            return 1
        a[j * p + j] = sqrt(s)
        for i in range(j + 1, p):
            s = a[i * p + j]
            for k in range(j):
                s -= a[i * p + k] * a[j * p + k]
            a[i * p + j] = s / a[j * p + j]
    for i in range(p):
        s = b[i]
        for k in range(i):
            s -= a[i * p + k] * b[k]
        b[i] = s / a[i * p + i]
    for i in range(p - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, p):
            s -= a[k * p + i] * b[k]
        b[i] = s / a[i * p + i]
    return 0


def local_linear(xdata, ydata, xeval, neighbors, bandwidth):
    cdef const double[:, :] xd = np.ascontiguousarray(xdata, dtype=np.float64)
    cdef const double[:] yd = np.ascontiguousarray(ydata, dtype=np.float64)
    cdef const double[:, :] xe = np.ascontiguousarray(xeval, dtype=np.float64)
    cdef const cnp.int64_t[:, :] nb = np.ascontiguousarray(neighbors, dtype=np.int64)
    cdef const double[:] hv = np.ascontiguousarray(bandwidth, dtype=np.float64)
    cdef Py_ssize_t m = xe.shape[0], d = xe.shape[1], kk = nb.shape[1]
    cdef Py_ssize_t p = d + 1
    if p > MAX_P:
        raise ValueError("dimension too large for local_linear kernel")
    fit_arr = np.empty(m, dtype=np.float64)
    lev_arr = np.empty(m, dtype=np.float64)
    cdef double[:] fit = fit_arr
    cdef double[:] lev = lev_arr
    cdef double gram[MAX_P * MAX_P]
    cdef double work[MAX_P * MAX_P]
    cdef double rhs[MAX_P]
    cdef double e0[MAX_P]
    cdef double row[MAX_P]
    cdef double dist, w, u, tr, ridge
    cdef Py_ssize_t i, j, a, b, c, idx
    cdef int failed
    with nogil:
        for i in range(m):
            for a in range(p * p):
                gram[a] = 0.0
            for a in range(p):
                rhs[a] = 0.0
            for j in range(kk):
                idx = nb[i, j]
                row[0] = 1.0
                dist = 0.0
                for c in range(d):
                    row[c + 1] = xd[idx, c] - xe[i, c]
                    dist += row[c + 1] * row[c + 1]
                u = sqrt(dist) / hv[i]
                if u >= 1.0:
                    continue
                u = 1.0 - u * u * u
                w = u * u * u
                for a in range(p):
                    rhs[a] += w * row[a] * yd[idx]
                    for b in range(p):
                        gram[a * p + b] += w * row[a] * row[b]
            tr = 0.0
            for a in range(p):
                tr += gram[a * p + a]
            ridge = 1e-12 * tr
            for a in range(p):
                gram[a * p + a] += ridge
            for a in range(p * p):
                work[a] = gram[a]
            failed = _chol_solve(work, rhs, p)
            if failed:
                fit[i] = NAN
                lev[i] = NAN
                continue
            fit[i] = rhs[0]
            for a in range(p * p):
                work[a] = gram[a]
            for a in range(p):
                e0[a] = 0.0
            e0[0] = 1.0
            _chol_solve(work, e0, p)
            lev[i] = e0[0]
    return fit_arr, lev_arr
