"""NumPy implementations of the kernel primitives.

This module is the reference backend: the compiled extension in
``_ckernels.pyx`` implements the same functions with identical rotation
ordering and update formulas, so both backends agree to floating-point
noise.  All arithmetic is float64/complex128.
"""

import numpy as np


def pairwise_distances(points):
    """Euclidean distance matrix for ``points`` of shape (n, d).

    Row blocks are sized to keep the broadcast temporaries around 32 MB.
    d(i, j) and d(j, i) are computed from exactly negated differences, so
    the result is symmetric to the bit and the diagonal is exactly zero.
    """
    n, d = points.shape
    out = np.empty((n, n), dtype=np.float64)
    block = max(1, (1 << 22) // max(1, n * d))
    for i0 in range(0, n, block):
        diff = points[i0:i0 + block, None, :] - points[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        np.sqrt(sq, out=out[i0:i0 + block])
    return out


def jacobi_eigh(mat, tol=1e-12, max_sweeps=60):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Classic triangular-update scheme: only the upper triangle of the
    working copy is rotated, the diagonal is tracked separately with
    compensated accumulators, and early sweeps skip rotations below a
    shrinking threshold.  Iteration stops once the off-diagonal Frobenius
    norm falls below ``tol * ||mat||_F``.

    Returns ``(eigenvalues, eigenvectors)`` unsorted; eigenvector columns
    are orthonormal.
    """
    a = np.array(mat, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return np.diag(a).copy(), v
    fro = np.linalg.norm(a)
    if fro == 0.0:
        return np.zeros(n), v
    stop = tol * fro

    d = np.diag(a).copy()
    b = d.copy()
    z = np.zeros(n)
    iu, ju = np.triu_indices(n, k=1)
    for sweep in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(a[iu, ju] ** 2))
        if off <= stop:
            w = d.copy()
            return w, v
        sm = np.sum(np.abs(a[iu, ju]))
        tresh = 0.2 * sm / (n * n) if sweep < 3 else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                g = 100.0 * abs(apq)
                if sweep > 3 and abs(d[p]) + g == abs(d[p]) \
                        and abs(d[q]) + g == abs(d[q]):
                    a[p, q] = 0.0
                    continue
                if abs(apq) <= tresh or apq == 0.0:
                    continue
                h = d[q] - d[p]
                if abs(h) + g == abs(h):
                    t = apq / h
                else:
                    theta = 0.5 * h / apq
                    t = 1.0 / (abs(theta) + np.sqrt(1.0 + theta * theta))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                tau = s / (1.0 + c)
                h = t * apq
                z[p] -= h
                z[q] += h
                d[p] -= h
                d[q] += h
                a[p, q] = 0.0
                # triangle segments around (p, q); same order as the C code
                for j in range(p):
                    _rot(a, s, tau, j, p, j, q)
                for j in range(p + 1, q):
                    _rot(a, s, tau, p, j, j, q)
                for j in range(q + 1, n):
                    _rot(a, s, tau, p, j, q, j)
                gj = v[:, p].copy()
                hj = v[:, q].copy()
                v[:, p] = gj - s * (hj + gj * tau)
                v[:, q] = hj + s * (gj - hj * tau)
        b += z
        d[:] = b
        z[:] = 0.0
    raise RuntimeError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def _rot(a, s, tau, i, j, k, l):
    g = a[i, j]
    h = a[k, l]
    a[i, j] = g - s * (h + g * tau)
    a[k, l] = h + s * (g - h * tau)
