"""MLP machinery tests: init, forward/backward, Adam, the four losses."""

import numpy as np
import pytest

from chartlab import nn
from chartlab.nn import AdamConfig, MlpSpec


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def fd_param_check(model, loss_fn, rng, n_params=20, h=1e-5, tol=1e-5):
    """Central finite differences on randomly chosen parameters."""
    x_like = loss_fn  # closure computes loss from current model params
    worst = 0.0
    loss, grads_w, grads_b = loss_fn()
    for _ in range(n_params):
        layer = int(rng.integers(model.spec.n_layers))
        if rng.integers(2):
            i = int(rng.integers(model.weights[layer].shape[0]))
            j = int(rng.integers(model.weights[layer].shape[1]))
            ref = grads_w[layer][i, j]
            orig = model.weights[layer][i, j]
            model.weights[layer][i, j] = orig + h
            lp, _, _ = loss_fn()
            model.weights[layer][i, j] = orig - h
            lm, _, _ = loss_fn()
            model.weights[layer][i, j] = orig
        else:
            j = int(rng.integers(model.biases[layer].shape[0]))
            ref = grads_b[layer][j]
            orig = model.biases[layer][j]
            model.biases[layer][j] = orig + h
            lp, _, _ = loss_fn()
            model.biases[layer][j] = orig - h
            lm, _, _ = loss_fn()
            model.biases[layer][j] = orig
        fd = (lp - lm) / (2 * h)
        scale = max(abs(fd), abs(ref), 1e-8)
        worst = max(worst, abs(fd - ref) / scale)
    assert worst < tol, f"finite-difference mismatch {worst}"


class TestInit:
    def test_glorot_bound(self):
        model = nn.glorot_init(MlpSpec((4, 3, 2)), 0)
        for w, (fi, fo) in zip(model.weights, ((4, 3), (3, 2))):
            limit = np.sqrt(6.0 / (fi + fo))
            assert np.abs(w).max() <= limit

    def test_biases_zero(self):
        model = nn.glorot_init(MlpSpec((4, 3, 2)), 0)
        assert all(np.all(b == 0) for b in model.biases)

    def test_seed_reproducible(self):
        a = nn.glorot_init(MlpSpec((5, 4, 3)), 7)
        b = nn.glorot_init(MlpSpec((5, 4, 3)), 7)
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            MlpSpec((4,)).validate()
        with pytest.raises(ValueError):
            MlpSpec((4, 0, 2)).validate()


class TestForward:
    def test_zero_params_zero_output(self):
        model = nn.glorot_init(MlpSpec((3, 2)), 0)
        model.weights[0][:] = 0.0
        assert np.array_equal(nn.forward(model, np.ones(3)), np.zeros(2))

    def test_single_linear_layer_matches_hand_multiply(self):
        model = nn.glorot_init(MlpSpec((3, 2)), 0)
        model.weights[0] = np.array([[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]])
        model.biases[0] = np.array([0.5, -0.5])
        out = nn.forward(model, np.array([1.0, 1.0, 1.0]))
        assert np.allclose(out, [1 + 2 + 3 + 0.5, 4 + 5 + 6 - 0.5])

    def test_relu_clamps_hidden(self):
        model = nn.glorot_init(MlpSpec((1, 1, 1)), 0)
        model.weights[0][:] = 1.0
        model.weights[1][:] = 1.0
        assert nn.forward(model, np.array([-1.0]))[0] == 0.0
        assert nn.forward(model, np.array([2.0]))[0] == 2.0

    def test_width_mismatch_rejected(self):
        model = nn.glorot_init(MlpSpec((3, 2)), 0)
        with pytest.raises(ValueError, match="width"):
            nn.forward(model, np.ones(4))

    def test_batch_equals_per_sample(self, rng):
        model = nn.glorot_init(MlpSpec((4, 5, 2)), 1)
        x = rng.standard_normal((6, 4))
        batch = nn.forward(model, x)
        singles = np.stack([nn.forward(model, row) for row in x])
        # gemm vs gemv may differ in the last bits
        assert np.abs(batch - singles).max() < 1e-12


class TestBackward:
    def test_matches_finite_differences(self, rng):
        model = nn.glorot_init(MlpSpec((5, 4, 3)), 2)
        x = rng.standard_normal((7, 5))
        target = rng.standard_normal((7, 3))

        def loss_fn():
            y, cache = nn.forward(model, x, want_cache=True)
            loss, grad = nn.mse_loss(y, target)
            gw, gb, _ = nn.backward(model, cache, grad)
            return loss, gw, gb

        fd_param_check(model, loss_fn, rng)

    def test_zero_grad_out_gives_zero_param_grads(self, rng):
        model = nn.glorot_init(MlpSpec((3, 3, 2)), 3)
        y, cache = nn.forward(model, rng.standard_normal((4, 3)), want_cache=True)
        gw, gb, gx = nn.backward(model, cache, np.zeros_like(y))
        assert all(np.all(g == 0) for g in gw + gb)
        assert np.all(gx == 0)

    def test_relu_subgradient_at_zero_is_zero(self):
        model = nn.glorot_init(MlpSpec((1, 1, 1)), 0)
        model.weights[0][:] = 1.0
        model.biases[0][:] = 0.0
        model.weights[1][:] = 1.0
        # pre-activation exactly zero -> no gradient through the unit
        y, cache = nn.forward(model, np.array([0.0]), want_cache=True)
        gw, gb, gx = nn.backward(model, cache, np.array([1.0]))
        assert gx[0] == 0.0
        assert gw[0][0, 0] == 0.0

    def test_stale_cache_rejected(self, rng):
        model = nn.glorot_init(MlpSpec((3, 2)), 0)
        y, cache = nn.forward(model, rng.standard_normal((2, 3)), want_cache=True)
        gw, gb, _ = nn.backward(model, cache, np.ones_like(y))
        nn.adam_step(model, gw, gb, AdamConfig())
        with pytest.raises(ValueError, match="stale"):
            nn.backward(model, cache, np.ones_like(y))


class TestAdam:
    def test_quadratic_matches_independent_recurrence(self):
        # oracle: the plain Adam recurrence written out by hand.  Running it
        # shows |w| shrinks monotonically for the first ~11 steps, then
        # momentum overshoots zero before settling; after 50 steps w ~ 0.
        model = nn.glorot_init(MlpSpec((1, 1)), 0)
        model.weights[0][0, 0] = 1.0
        cfg = AdamConfig(learning_rate=0.1)
        w_ref, m, v = 1.0, 0.0, 0.0
        prev = 1.0
        for t in range(1, 51):
            nn.adam_step(model, [np.array([[2.0 * model.weights[0][0, 0]]])],
                         [np.zeros(1)], cfg)
            g = 2.0 * w_ref
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            w_ref -= cfg.learning_rate * (m / (1 - cfg.beta1 ** t)) \
                / (np.sqrt(v / (1 - cfg.beta2 ** t)) + cfg.epsilon)
            assert abs(model.weights[0][0, 0] - w_ref) < 1e-14
            if t <= 10:
                assert abs(w_ref) < prev
                prev = abs(w_ref)
        assert abs(w_ref) < 0.01

    def test_zero_gradient_keeps_params(self):
        model = nn.glorot_init(MlpSpec((2, 2)), 1)
        before = [w.copy() for w in model.weights]
        nn.adam_step(model, [np.zeros((2, 2))], [np.zeros(2)], AdamConfig())
        assert model.step == 1
        assert all(np.array_equal(a, b) for a, b in zip(before, model.weights))

    def test_first_step_size_is_learning_rate(self, rng):
        # update formula at t=1: step = -lr * g / (|g| + eps), i.e. about
        # lr in magnitude whatever the gradient scale
        cfg = AdamConfig(learning_rate=0.05)
        for scale in (1e-3, 1.0, 1e6):
            model = nn.glorot_init(MlpSpec((2, 2)), 2)
            before = model.weights[0].copy()
            grad = scale * rng.standard_normal((2, 2))
            nn.adam_step(model, [grad], [np.zeros(2)], cfg)
            step = model.weights[0] - before
            expect = -cfg.learning_rate * grad / (np.abs(grad) + cfg.epsilon)
            assert np.abs(step - expect).max() < 1e-12
            assert np.abs(np.abs(step) - cfg.learning_rate).max() \
                < 1e-4 * cfg.learning_rate

    def test_shape_mismatch_rejected(self):
        model = nn.glorot_init(MlpSpec((2, 2)), 0)
        with pytest.raises(ValueError):
            nn.adam_step(model, [np.zeros((3, 2))], [np.zeros(2)], AdamConfig())


class TestTripletLoss:
    def test_hinge_boundary(self):
        v = np.array([1.0, 0.0])
        loss, _ = nn.triplet_loss(v, v, v + np.array([10.0, 0.0]), 10.0)
        assert loss == 0.0

    def test_all_equal_gives_margin(self):
        v = np.array([1.0, 2.0])
        loss, _ = nn.triplet_loss(v, v, v, 10.0)
        assert loss == 10.0

    def test_orthogonal_transform_invariance(self, rng):
        va, vc, vf = (rng.standard_normal((5, 4)) for _ in range(3))
        theta = 0.7
        rot = np.eye(4)
        rot[:2, :2] = [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        l0, _ = nn.triplet_loss(va, vc, vf, 2.0)
        l1, _ = nn.triplet_loss(va @ rot, vc @ rot, vf @ rot, 2.0)
        assert abs(l0 - l1) < 1e-12

    def test_inactive_hinge_zero_gradient(self):
        va = np.array([[0.0, 0.0]])
        vc = np.array([[0.1, 0.0]])
        vf = np.array([[100.0, 0.0]])
        loss, (gn, gc, gf) = nn.triplet_loss(va, vc, vf, 1.0)
        assert loss == 0.0
        assert np.all(gn == 0) and np.all(gc == 0) and np.all(gf == 0)

    def test_zero_distance_gradient_defined_zero(self):
        v = np.array([[1.0, 1.0]])
        loss, (gn, gc, gf) = nn.triplet_loss(v, v, v, 5.0)
        assert np.all(np.isfinite(gn))
        assert np.all(gn == 0) and np.all(gc == 0)


class TestMseLoss:
    def test_exact_cases(self):
        assert nn.mse_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]))[0] == 0.0
        loss, _ = nn.mse_loss(np.array([0.0, 0.0]), np.array([3.0, 4.0]))
        assert loss == 25.0

    def test_gradient_matches_finite_differences(self, rng):
        pred = rng.standard_normal((5, 2))
        target = rng.standard_normal((5, 2))
        loss, grad = nn.mse_loss(pred, target)
        h = 1e-7
        for i, j in ((0, 0), (3, 1)):
            e = np.zeros_like(pred)
            e[i, j] = h
            fd = (nn.mse_loss(pred + e, target)[0]
                  - nn.mse_loss(pred - e, target)[0]) / (2 * h)
            assert abs(fd - grad[i, j]) < 1e-7


class TestSiameseLoss:
    def test_matched_distances_zero_loss(self, rng):
        x = rng.standard_normal((6, 2))
        loss, grad = nn.siamese_loss(x, x.copy(), np.triu_indices(6, k=1))
        assert loss < 1e-20
        assert np.abs(grad).max() < 1e-9

    def test_single_pair_contribution(self):
        x = np.array([[0.0, 0.0], [2.0, 0.0]])
        v = np.array([[0.0], [1.0]])
        loss, _ = nn.siamese_loss(x, v, ([0], [1]))
        # gamma ~ 1/2, residual (2-1)^2, normalized by n=2 samples
        assert abs(loss - 0.25) < 1e-7

    def test_gradient_matches_frozen_gamma_fd(self, rng):
        x = rng.standard_normal((6, 2))
        v = rng.standard_normal((6, 3))
        pairs = np.triu_indices(6, k=1)
        dx = x[pairs[0]] - x[pairs[1]]
        gamma = 1.0 / (np.linalg.norm(dx, axis=1) + 1e-8)
        loss, grad = nn.siamese_loss(x, v, pairs)
        h = 1e-6
        worst = 0.0
        for i in range(6):
            for j in range(2):
                e = np.zeros_like(x)
                e[i, j] = h
                fd = (nn.siamese_loss(x + e, v, pairs, gamma=gamma)[0]
                      - nn.siamese_loss(x - e, v, pairs, gamma=gamma)[0]) / (2 * h)
                scale = max(abs(fd), abs(grad[i, j]), 1e-8)
                worst = max(worst, abs(fd - grad[i, j]) / scale)
        assert worst < 1e-5

    def test_empty_pairs_rejected(self, rng):
        with pytest.raises(ValueError, match="pair"):
            nn.siamese_loss(rng.standard_normal((3, 2)),
                            rng.standard_normal((3, 2)), ([], []))


class TestAeLoss:
    def test_exact_cases(self, rng):
        x = rng.standard_normal((3, 4))
        assert nn.ae_loss(x, x.copy())[0] == 0.0
        loss, _ = nn.ae_loss(np.zeros(4), np.ones(4))
        assert loss == 4.0

    def test_gradient_matches_finite_differences(self, rng):
        x = rng.standard_normal((4, 3))
        r = rng.standard_normal((4, 3))
        loss, grad = nn.ae_loss(x, r)
        h = 1e-7
        e = np.zeros_like(r)
        e[2, 1] = h
        fd = (nn.ae_loss(x, r + e)[0] - nn.ae_loss(x, r - e)[0]) / (2 * h)
        assert abs(fd - grad[2, 1]) < 1e-7


class TestDeterminismAndCheckpoints:
    def test_identical_training_runs_bitwise(self, rng):
        def run():
            model = nn.glorot_init(MlpSpec((4, 3, 2)), 11)
            r = np.random.default_rng(5)
            cfg = AdamConfig()
            for _ in range(20):
                x = r.standard_normal((6, 4))
                t = r.standard_normal((6, 2))
                y, cache = nn.forward(model, x, want_cache=True)
                _, grad = nn.mse_loss(y, t)
                gw, gb, _ = nn.backward(model, cache, grad)
                nn.adam_step(model, gw, gb, cfg)
            return model
        a, b = run(), run()
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
        assert all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))

    def test_checkpoint_round_trip(self, tmp_path, rng):
        model = nn.glorot_init(MlpSpec((5, 4, 2)), 3)
        nn.adam_step(model, [rng.standard_normal(w.shape) for w in model.weights],
                     [rng.standard_normal(b.shape) for b in model.biases],
                     AdamConfig())
        path = tmp_path / "m.ckpt"
        nn.save_model(model, path)
        back = nn.load_model(path)
        assert back.spec == model.spec
        assert all(np.array_equal(a, b) for a, b in zip(back.weights, model.weights))
        assert all(np.array_equal(a, b) for a, b in zip(back.biases, model.biases))

    def test_checkpoint_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(ValueError, match="checkpoint"):
            nn.load_model(path)
