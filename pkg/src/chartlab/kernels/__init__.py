"""Dense numeric kernels shared by the whole package.

Public operations
-----------------
idft_subcarriers : inverse DFT along the subcarrier (last) axis of a CSI tensor
idft_taps        : same transform, keeping only the first ``n_taps`` outputs
vectorize        : frozen flattening of a CSI tensor into a complex vector
sym_eig_desc     : symmetric eigendecomposition, eigenvalues descending
pairwise_distances : Euclidean distance matrix between point rows

Two backends implement the hot loops (Jacobi rotations, distance matrix):
a Cython extension compiled at install time and a NumPy fallback.  The
compiled one is picked automatically when importable; set
``CHARTLAB_PURE_PYTHON=1`` to force the fallback.  ``backend_name()``
reports which one is active.  The inverse DFT is a dense matrix product in
either mode and is delegated to BLAS through NumPy.

Conventions (frozen)
--------------------
* The inverse transform carries the 1/W factor:
  ``out[c] = (1/W) * sum_w in[w] * exp(+2j*pi*w*c/W)``.
* ``vectorize`` flattens with the subcarrier/tap axis fastest, then
  UE antenna, AP antenna, AP (C order on an (A, B, U, W) tensor).
* Eigenvector signs are fixed so each column's largest-magnitude entry is
  positive; descending eigenvalue ties keep Jacobi output order.

All computation is 64-bit.
"""

import os
from functools import lru_cache

import numpy as np

from . import _pybackend

if os.environ.get("CHARTLAB_PURE_PYTHON"):
    _impl = _pybackend
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pybackend


def backend_name() -> str:
    """Name of the active hot-loop backend: 'cython' or 'numpy'."""
    return "numpy" if _impl is _pybackend else "cython"


def _check_tensor4(t) -> np.ndarray:
    t = np.ascontiguousarray(t, dtype=np.complex128)
    if t.ndim != 4:
        raise ValueError(f"expected a 4-axis CSI tensor, got ndim={t.ndim}")
    if min(t.shape) < 1:
        raise ValueError(f"all tensor axes must be nonempty, got shape {t.shape}")
    if not np.isfinite(t).all():
        raise ValueError("CSI tensor contains non-finite entries")
    return t


def _check_matrix(m) -> np.ndarray:
    m = np.ascontiguousarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={m.ndim}")
    if not np.isfinite(m).all():
        raise ValueError("matrix contains non-finite entries")
    return m


@lru_cache(maxsize=16)
def _idft_matrix(n_in: int, n_out: int) -> np.ndarray:
    # exp(2j*pi*w*c/W)/W; the (w*c) mod W reduction keeps the phase argument
    # small so the table stays accurate for large W.
    w = np.arange(n_in, dtype=np.int64)
    c = np.arange(n_out, dtype=np.int64)
    k = np.outer(w, c) % n_in
    mat = np.exp((2j * np.pi / n_in) * k) / n_in
    mat.flags.writeable = False
    return mat


def idft_taps(t, n_taps: int) -> np.ndarray:
    """Inverse DFT along the last axis, truncated to the first ``n_taps`` taps.

    Each output tap is the full length-W inverse transform evaluated at that
    tap index, so this equals ``idft_subcarriers(t)[..., :n_taps]``.
    """
    t = _check_tensor4(t)
    n_subc = t.shape[-1]
    if not 1 <= n_taps <= n_subc:
        raise ValueError(f"n_taps must be in [1, {n_subc}], got {n_taps}")
    return t @ _idft_matrix(n_subc, n_taps)


def idft_subcarriers(t) -> np.ndarray:
    """Inverse DFT along the subcarrier axis; output dims equal input dims."""
    t = _check_tensor4(t)
    return t @ _idft_matrix(t.shape[-1], t.shape[-1])


def vectorize(t) -> np.ndarray:
    """Flatten a CSI tensor to a complex vector in the frozen axis order.

    The last (subcarrier/tap) axis varies fastest, then UE antenna, AP
    antenna, AP.  Always returns a fresh array.
    """
    t = _check_tensor4(t)
    return t.reshape(-1).copy()


def sym_eig_desc(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Parameters
    ----------
    m : array_like, shape (n, n)
        Must be symmetric to a relative tolerance of 1e-9 (Frobenius).

    Returns
    -------
    (eigenvalues, eigenvectors)
        ``eigenvalues`` sorted descending; ``eigenvectors`` has orthonormal
        columns, ``m @ v[:, i] ~= w[i] * v[:, i]``, and each column's
        largest-magnitude entry is positive.
    """
    m = _check_matrix(m)
    n, ncols = m.shape
    if n != ncols:
        raise ValueError(f"matrix must be square, got {m.shape}")
    fro = np.linalg.norm(m)
    if np.linalg.norm(m - m.T) > 1e-9 * max(fro, np.finfo(np.float64).tiny):
        raise ValueError("matrix is not symmetric within relative tolerance 1e-9")
    sym = (m + m.T) / 2.0
    w, v = _impl.jacobi_eigh(sym, 1e-12, 60)
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    peaks = np.argmax(np.abs(v), axis=0)
    flip = v[peaks, np.arange(n)] < 0.0
    v[:, flip] *= -1.0
    return w, v


def pairwise_distances(points) -> np.ndarray:
    """Symmetric Euclidean distance matrix between the rows of ``points``."""
    pts = _check_matrix(points)
    if pts.shape[0] < 2:
        raise ValueError(f"need at least 2 points, got {pts.shape[0]}")
    return _impl.pairwise_distances(pts)
