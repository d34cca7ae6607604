import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcptest.network import (
    NetworkConfig,
    PROB_CLIP,
    count_parameters,
    fit_softmax_network,
    fit_weight_network,
    flatten_params,
    formula_parameter_count,
    forward_probs,
    init_params,
    loss_and_gradient,
    predict_weight,
    unflatten_params,
    weight_model_loss,
    weighted_cross_entropy,
)


def toy_problem(n=200, n_inputs=5, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.integers(0, 2, (n, n_inputs - 1))]).astype(float)
    logits = X @ rng.normal(0, 0.8, (n_inputs, 4))
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    labels = np.array([rng.choice(4, p=p) for p in probs])
    w = rng.uniform(0.2, 1.0, n)
    return X, labels, w


class TestParameterCount:
    def test_depth_zero(self):
        assert count_parameters(NetworkConfig(depth=0), 49) == 49 * 4

    def test_depth_two_width_16(self):
        # 49*16+16 (input) + 16*16+16 (hidden) + 16*4+4 (output) = 1140
        assert count_parameters(NetworkConfig(depth=2, width=16), 49) == 1140

    def test_formula_count(self):
        # n_X*W + (D-1)*W^2 + 3W = 49*16 + 256 + 48 = 1088
        assert formula_parameter_count(NetworkConfig(depth=2, width=16), 49) == 1088
        assert formula_parameter_count(NetworkConfig(depth=0), 49) == 147

    def test_count_matches_actual_tensors(self):
        for depth, width in [(0, 8), (1, 8), (3, 16)]:
            cfg = NetworkConfig(depth=depth, width=width)
            params = init_params(cfg, 11, 4, np.random.default_rng(0))
            total = sum(
                W.size + (0 if b is None else b.size) for W, b in params
            )
            assert total == count_parameters(cfg, 11)


class TestForward:
    def test_probs_on_simplex(self):
        X, _, _ = toy_problem()
        cfg = NetworkConfig(depth=2, width=8)
        params = init_params(cfg, X.shape[1], 4, np.random.default_rng(1))
        probs = forward_probs(params, X)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(probs > 0)

    def test_depth_zero_is_linear_softmax(self):
        X, _, _ = toy_problem(n=50)
        cfg = NetworkConfig(depth=0)
        params = init_params(cfg, X.shape[1], 4, np.random.default_rng(2))
        probs = forward_probs(params, X)
        scores = X @ params[0][0]
        manual = np.exp(scores - scores.max(axis=1, keepdims=True))
        manual /= manual.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(probs, manual, atol=1e-12)


class TestLoss:
    def test_weighted_cross_entropy_manual(self):
        probs = np.array([[0.7, 0.1, 0.1, 0.1], [0.25, 0.25, 0.25, 0.25]])
        labels = np.array([0, 3])
        w = np.array([1.0, 0.5])
        expected = -(1.0 * np.log(0.7) + 0.5 * np.log(0.25)) / 1.5
        assert weighted_cross_entropy(probs, labels, w) == pytest.approx(expected, abs=1e-12)

    def test_clip_guards_zero_probability(self):
        probs = np.array([[1.0, 0.0, 0.0, 0.0]])
        v = weighted_cross_entropy(probs, np.array([1]), np.array([1.0]))
        assert v == pytest.approx(-np.log(PROB_CLIP), abs=1e-6)

    def test_weight_scaling_invariance(self):
        X, labels, w = toy_problem(n=60)
        probs = forward_probs(
            init_params(NetworkConfig(depth=0), X.shape[1], 4, np.random.default_rng(3)), X
        )
        a = weighted_cross_entropy(probs, labels, w)
        b = weighted_cross_entropy(probs, labels, 7.0 * w)
        assert a == pytest.approx(b, abs=1e-12)


class TestGradient:
    @pytest.mark.parametrize("depth,width,n_inputs", [(0, 16, 3), (1, 2, 2)])
    def test_backprop_matches_finite_differences(self, depth, width, n_inputs):
        """Small instances, at most 20 parameters."""
        cfg = NetworkConfig(depth=depth, width=width)
        rng = np.random.default_rng(4)
        n = 40
        X = np.column_stack([np.ones(n), rng.normal(size=(n, n_inputs - 1))])
        labels = rng.integers(0, 4, n)
        w = rng.uniform(0.2, 1.0, n)
        params = init_params(cfg, n_inputs, 4, rng)
        flat = flatten_params(params)
        assert flat.size <= 20 or depth == 0

        _, grads = loss_and_gradient(params, X, labels, w)
        g_flat = flatten_params(grads)
        h = 1e-6
        fd = np.zeros_like(flat)
        for j in range(flat.size):
            up, dn = flat.copy(), flat.copy()
            up[j] += h
            dn[j] -= h
            lu, _ = loss_and_gradient(unflatten_params(up, params), X, labels, w)
            ld, _ = loss_and_gradient(unflatten_params(dn, params), X, labels, w)
            fd[j] = (lu - ld) / (2 * h)
        rel = np.abs(g_flat - fd) / np.maximum(np.abs(fd), 1e-8)
        assert rel.max() < 1e-4


class TestTraining:
    def test_deterministic(self):
        X, labels, w = toy_problem(n=300)
        cfg = NetworkConfig(depth=1, width=8, dropout=0.2, seed=5, max_epochs=30)
        Xv, lv, wv = X[:60], labels[:60], w[:60]
        p1, r1 = fit_softmax_network(X, labels, w, Xv, lv, wv, cfg, 4)
        p2, r2 = fit_softmax_network(X, labels, w, Xv, lv, wv, cfg, 4)
        assert np.array_equal(flatten_params(p1), flatten_params(p2))
        assert r1.validation_losses == r2.validation_losses

    def test_seed_changes_result(self):
        X, labels, w = toy_problem(n=300)
        Xv, lv, wv = X[:60], labels[:60], w[:60]
        p1, _ = fit_softmax_network(
            X, labels, w, Xv, lv, wv, NetworkConfig(depth=1, width=8, seed=1, max_epochs=10), 4
        )
        p2, _ = fit_softmax_network(
            X, labels, w, Xv, lv, wv, NetworkConfig(depth=1, width=8, seed=2, max_epochs=10), 4
        )
        assert not np.array_equal(flatten_params(p1), flatten_params(p2))

    def test_loss_decreases(self):
        X, labels, w = toy_problem(n=500, seed=7)
        cfg = NetworkConfig(depth=0, seed=3, max_epochs=200)
        params, report = fit_softmax_network(X, labels, w, X, labels, w, cfg, 4)
        assert report.validation_losses[report.best_epoch] < report.validation_losses[0]

    def test_early_stopping(self):
        X, labels, w = toy_problem(n=300, seed=8)
        cfg = NetworkConfig(depth=0, seed=3, max_epochs=500, patience=3)
        _, report = fit_softmax_network(X, labels, w, X[:50], labels[:50], w[:50], cfg, 4)
        if report.epochs_run < cfg.max_epochs:
            # Stopped early: no improvement in the last `patience` epochs.
            tail = report.validation_losses[report.best_epoch + 1 :]
            assert len(tail) >= cfg.patience

    def test_best_params_snapshot(self):
        """Returned parameters evaluate to the best recorded validation loss."""
        X, labels, w = toy_problem(n=300, seed=9)
        Xv, lv, wv = X[:80], labels[:80], w[:80]
        cfg = NetworkConfig(depth=1, width=4, seed=6, max_epochs=60)
        params, report = fit_softmax_network(X, labels, w, Xv, lv, wv, cfg, 4)
        val = weighted_cross_entropy(forward_probs(params, Xv), lv, wv)
        assert val == pytest.approx(min(report.validation_losses), abs=1e-10)


class TestWeightModel:
    def test_loss_gradient_check(self):
        """Analytic gradient of the weight NLL vs central differences."""
        from pcptest.network import weight_model_gradient

        rng = np.random.default_rng(11)
        n = 30
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        w = np.where(rng.random(n) < 0.4, 1.0, rng.beta(2, 2, n).clip(1e-6, 1 - 1e-6))
        cfg = NetworkConfig(depth=0, seed=0)
        params = init_params(cfg, 3, 2, rng)
        grads = weight_model_gradient(params, X, w)
        flat = flatten_params(params)
        g_flat = flatten_params(grads)
        h = 1e-6
        for j in range(flat.size):
            up, dn = flat.copy(), flat.copy()
            up[j] += h
            dn[j] -= h
            lu = weight_model_loss(unflatten_params(up, params), X, w)
            ld = weight_model_loss(unflatten_params(dn, params), X, w)
            fd = (lu - ld) / (2 * h)
            assert g_flat[j] == pytest.approx(fd, abs=1e-6, rel=1e-4)

    def test_predictions_in_unit_interval(self):
        rng = np.random.default_rng(12)
        n = 400
        X = np.column_stack([np.ones(n), rng.integers(0, 2, (n, 3))]).astype(float)
        w = np.where(rng.random(n) < 0.4, 1.0, rng.beta(2, 2, n).clip(1e-6, 1 - 1e-6))
        cfg = NetworkConfig(depth=1, width=4, seed=1, max_epochs=50)
        params, _ = fit_weight_network(X, w, X[:80], w[:80], cfg)
        pred = predict_weight(params, X)
        assert np.all(pred > 0) and np.all(pred <= 1.0)

    def test_learns_mean_weight(self):
        rng = np.random.default_rng(13)
        n = 4000
        X = np.ones((n, 1))
        w = np.where(rng.random(n) < 0.4, 1.0, rng.beta(2, 2, n).clip(1e-6, 1 - 1e-6))
        cfg = NetworkConfig(depth=0, seed=2, max_epochs=300)
        params, _ = fit_weight_network(X, w, X[:500], w[:500], cfg)
        pred = predict_weight(params, X[:1])
        assert pred[0] == pytest.approx(w.mean(), abs=0.03)


class TestValidation:
    def test_rejects_bad_dropout(self):
        with pytest.raises(ValueError):
            NetworkConfig(dropout=1.0)

    def test_rejects_negative_depth(self):
        with pytest.raises(ValueError):
            NetworkConfig(depth=-1)


@given(
    depth=st.integers(min_value=0, max_value=3),
    width=st.integers(min_value=1, max_value=32),
    n_inputs=st.integers(min_value=1, max_value=60),
)
@settings(max_examples=50, deadline=None)
def test_parameter_count_formula_property(depth, width, n_inputs):
    cfg = NetworkConfig(depth=depth, width=width)
    params = init_params(cfg, n_inputs, 4, np.random.default_rng(0))
    total = sum(W.size + (0 if b is None else b.size) for W, b in params)
    assert total == count_parameters(cfg, n_inputs)
