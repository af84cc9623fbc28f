# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend.

Mirrors ``_pybackend`` exactly: same rotation order, same update formulas,
same stopping rule.  Kept dependency-free beyond NumPy buffers so the module
builds with a bare C compiler.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def pairwise_distances(double[:, ::1] points):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    out_arr = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    for i in range(n):
        out[i, i] = 0.0
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                diff = points[i, k] - points[j, k]
                acc += diff * diff
            acc = sqrt(acc)
            out[i, j] = acc
            out[j, i] = acc
    return out_arr


cdef inline void _rot(double[:, ::1] a, double s, double tau,
                      Py_ssize_t i, Py_ssize_t j, Py_ssize_t k, Py_ssize_t l) noexcept:
    cdef double g = a[i, j]
    cdef double h = a[k, l]
    a[i, j] = g - s * (h + g * tau)
    a[k, l] = h + s * (g - h * tau)


def jacobi_eigh(mat, double tol=1e-12, int max_sweeps=60):
    a_arr = np.array(mat, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t n = a_arr.shape[0]
    v_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] v = v_arr
    if n == 1:
        return np.diag(a_arr).copy(), v_arr

    cdef double fro = 0.0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            fro += a[i, j] * a[i, j]
    fro = sqrt(fro)
    if fro == 0.0:
        return np.zeros(n), v_arr
    cdef double stop = tol * fro

    d_arr = np.diag(a_arr).copy()
    b_arr = d_arr.copy()
    z_arr = np.zeros(n)
    cdef double[::1] d = d_arr
    cdef double[::1] b = b_arr
    cdef double[::1] z = z_arr

    cdef double off, sm, tresh, apq, g, h, theta, t, c, s, tau, gj, hj
    cdef Py_ssize_t sweep, p, q, k
    for sweep in range(max_sweeps):
        off = 0.0
        sm = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
                sm += fabs(a[p, q])
        off = sqrt(2.0 * off)
        if off <= stop:
            return d_arr.copy(), v_arr
        tresh = 0.2 * sm / (n * n) if sweep < 3 else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                g = 100.0 * fabs(apq)
                if sweep > 3 and fabs(d[p]) + g == fabs(d[p]) \
                        and fabs(d[q]) + g == fabs(d[q]):
                    a[p, q] = 0.0
                    continue
                if fabs(apq) <= tresh or apq == 0.0:
                    continue
                h = d[q] - d[p]
                if fabs(h) + g == fabs(h):
                    t = apq / h
                else:
                    theta = 0.5 * h / apq
                    t = 1.0 / (fabs(theta) + sqrt(1.0 + theta * theta))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                tau = s / (1.0 + c)
                h = t * apq
                z[p] -= h
                z[q] += h
                d[p] -= h
                d[q] += h
                a[p, q] = 0.0
                for k in range(p):
                    _rot(a, s, tau, k, p, k, q)
                for k in range(p + 1, q):
                    _rot(a, s, tau, p, k, k, q)
                for k in range(q + 1, n):
                    _rot(a, s, tau, p, k, q, k)
                for k in range(n):
                    gj = v[k, p]
                    hj = v[k, q]
                    v[k, p] = gj - s * (hj + gj * tau)
                    v[k, q] = hj + s * (gj - hj * tau)
        for k in range(n):
            b[k] += z[k]
            d[k] = b[k]
            z[k] = 0.0
    raise RuntimeError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
