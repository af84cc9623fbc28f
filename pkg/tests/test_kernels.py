"""Numeric kernel tests: transform identities, eigensolver, distances."""

import numpy as np
import pytest

import chartlab.kernels as K
from chartlab.kernels import _pybackend


def rand_tensor(rng, dims):
    return rng.standard_normal(dims) + 1j * rng.standard_normal(dims)


class TestIdft:
    def test_flat_spectrum_is_delta(self):
        t = np.ones((1, 1, 1, 8), dtype=np.complex128)
        taps = K.idft_subcarriers(t)[0, 0, 0]
        assert abs(taps[0] - 1.0) < 1e-12
        assert np.abs(taps[1:]).max() < 1e-12

    def test_single_tone_lands_on_its_tap(self):
        # A[w] = exp(-2j pi w 3 / 8) has all its energy in tap 3
        w = np.arange(8)
        t = np.exp(-2j * np.pi * w * 3 / 8).reshape(1, 1, 1, 8)
        taps = K.idft_subcarriers(t)[0, 0, 0]
        assert abs(taps[3] - 1.0) < 1e-12
        assert np.abs(np.delete(taps, 3)).max() < 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(0)
        x = rand_tensor(rng, (2, 2, 1, 16))
        y = rand_tensor(rng, (2, 2, 1, 16))
        a, b = 1.7 - 0.3j, -0.4 + 2.2j
        lhs = K.idft_subcarriers(a * x + b * y)
        rhs = a * K.idft_subcarriers(x) + b * K.idft_subcarriers(y)
        assert np.abs(lhs - rhs).max() < 1e-12

    def test_parseval_with_one_over_w_normalization(self):
        rng = np.random.default_rng(1)
        for dims in [(1, 1, 1, 7), (3, 2, 1, 33), (2, 4, 2, 300)]:
            t = rand_tensor(rng, dims)
            full = K.idft_subcarriers(t)
            w = dims[-1]
            rel = abs(np.linalg.norm(full) - np.linalg.norm(t) / np.sqrt(w))
            assert rel / np.linalg.norm(t) < 1e-12

    def test_output_dims_and_taps_prefix(self):
        rng = np.random.default_rng(2)
        t = rand_tensor(rng, (2, 3, 1, 19))
        full = K.idft_subcarriers(t)
        assert full.shape == t.shape
        part = K.idft_taps(t, 5)
        assert part.shape == (2, 3, 1, 5)
        assert np.abs(part - full[..., :5]).max() < 1e-14

    def test_rejects_nonfinite(self):
        t = np.ones((1, 1, 1, 4), dtype=np.complex128)
        t[0, 0, 0, 2] = np.nan
        with pytest.raises(ValueError, match="finite"):
            K.idft_subcarriers(t)

    def test_taps_range_checked(self):
        t = np.ones((1, 1, 1, 4), dtype=np.complex128)
        with pytest.raises(ValueError):
            K.idft_taps(t, 0)
        with pytest.raises(ValueError):
            K.idft_taps(t, 5)


class TestVectorize:
    def test_small_order(self):
        t = np.array([1 + 1j, 2.0, 3 - 2j]).reshape(1, 1, 1, 3)
        assert np.array_equal(K.vectorize(t), np.array([1 + 1j, 2.0, 3 - 2j]))

    def test_last_axis_fastest(self):
        t = np.arange(2 * 3 * 1 * 4).reshape(2, 3, 1, 4).astype(np.complex128)
        v = K.vectorize(t)
        # entry (a, b, u, w) lands at ((a*3 + b)*1 + u)*4 + w
        assert v[1 * 3 * 4 + 2 * 4 + 3] == t[1, 2, 0, 3]

    def test_norm_preserved(self):
        rng = np.random.default_rng(3)
        t = rand_tensor(rng, (3, 2, 2, 5))
        assert abs(np.linalg.norm(K.vectorize(t)) - np.linalg.norm(t)) < 1e-12

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        t = rand_tensor(rng, (2, 3, 1, 5))
        assert np.array_equal(K.vectorize(t).reshape(t.shape), t)


class TestSymEig:
    def test_identity(self):
        w, v = K.sym_eig_desc(np.eye(3))
        assert np.allclose(w, 1.0)
        assert np.allclose(v @ v.T, np.eye(3), atol=1e-12)

    def test_diagonal(self):
        w, v = K.sym_eig_desc(np.diag([5.0, 2.0]))
        assert np.allclose(w, [5.0, 2.0])
        assert np.allclose(np.abs(v), np.eye(2), atol=1e-12)

    def test_random_symmetric_definition_residual(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((6, 6))
        m = m + m.T
        w, v = K.sym_eig_desc(m)
        assert np.abs(m @ v - v * w).max() <= 1e-10 * np.linalg.norm(m)
        assert np.abs(v.T @ v - np.eye(6)).max() < 1e-12
        assert np.all(np.diff(w) <= 1e-12)

    def test_eigenvalue_sum_matches_trace(self):
        rng = np.random.default_rng(6)
        for n in (2, 5, 17, 40):
            m = rng.standard_normal((n, n))
            m = m + m.T
            w, _ = K.sym_eig_desc(m)
            assert abs(w.sum() - np.trace(m)) <= 1e-9 * max(abs(np.trace(m)), 1.0)

    def test_matches_lapack_oracle(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((12, 12))
        m = m + m.T
        w, v = K.sym_eig_desc(m)
        w_ref = np.linalg.eigvalsh(m)[::-1]
        assert np.abs(w - w_ref).max() < 1e-10

    def test_sign_convention(self):
        rng = np.random.default_rng(8)
        m = rng.standard_normal((5, 5))
        m = m + m.T
        _, v = K.sym_eig_desc(m)
        for col in v.T:
            assert col[np.argmax(np.abs(col))] > 0

    def test_rejects_asymmetric_and_nonsquare(self):
        with pytest.raises(ValueError, match="symmetric"):
            K.sym_eig_desc(np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(ValueError, match="square"):
            K.sym_eig_desc(np.ones((2, 3)))


class TestPairwise:
    def test_three_four_five(self):
        d = K.pairwise_distances(np.array([[0.0, 0.0], [3.0, 4.0]]))
        assert d[0, 1] == d[1, 0] == 5.0
        assert d[0, 0] == d[1, 1] == 0.0

    def test_triangle_inequality(self):
        rng = np.random.default_rng(9)
        pts = rng.standard_normal((50, 3))
        d = K.pairwise_distances(pts)
        i, j, k = rng.integers(50, size=(3, 200))
        assert np.all(d[i, k] <= d[i, j] + d[j, k] + 1e-12)

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(10)
        pts = rng.standard_normal((100, 4))
        d = K.pairwise_distances(pts)
        naive = np.empty((100, 100))
        for i in range(100):
            for j in range(100):
                naive[i, j] = np.sqrt(((pts[i] - pts[j]) ** 2).sum())
        assert np.abs(d - naive).max() < 1e-12

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            K.pairwise_distances(np.ones((1, 3)))


class TestBackendsAgree:
    """The compiled and NumPy backends implement the same algorithms."""

    def test_pairwise(self):
        rng = np.random.default_rng(11)
        pts = rng.standard_normal((60, 5))
        assert np.abs(K.pairwise_distances(pts)
                      - _pybackend.pairwise_distances(pts)).max() < 1e-12

    @pytest.mark.parametrize("n", [2, 7, 24])
    def test_jacobi(self, n):
        rng = np.random.default_rng(n)
        m = rng.standard_normal((n, n))
        m = m + m.T
        w_a, v_a = K._impl.jacobi_eigh(m, 1e-12, 60)
        w_b, v_b = _pybackend.jacobi_eigh(m, 1e-12, 60)
        assert np.abs(np.sort(w_a) - np.sort(w_b)).max() < 1e-10
        for w, v in ((w_a, v_a), (w_b, v_b)):
            assert np.abs(m @ v - v * w).max() < 1e-10 * np.linalg.norm(m)

    def test_backend_name_reports(self):
        assert K.backend_name() in ("cython", "numpy")
