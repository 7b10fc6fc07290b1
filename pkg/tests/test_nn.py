import math

import numpy as np
import pytest

from ordino.errors import NonFiniteGradient
from ordino.nn import (
    Adam,
    GruLayerConfig,
    ParameterStore,
    attention_backward,
    attention_forward,
    clip_global_norm,
    dropout_forward,
    grad_check,
    gru_backward,
    gru_forward,
    gru_init,
    linear_backward,
    linear_forward,
    load_checkpoint,
    log_softmax,
    save_checkpoint,
    sigmoid,
    softmax,
)
from ordino.losses import nll_sum_grad


def _gru_setup(input_dim, hidden, layers=1, seed=0, dropout=0.0):
    store = ParameterStore()
    config = GruLayerConfig(
        input_dim=input_dim,
        hidden_dim=hidden,
        num_layers=layers,
        inter_layer_dropout=dropout,
    )
    params = gru_init(store, "gru", config, np.random.default_rng(seed))
    return store, config, params


class TestGru:
    def test_zero_weights_give_zero_outputs(self):
        store, config, params = _gru_setup(3, 4, layers=2)
        for p in store:
            p.value[...] = 0.0
        x = np.random.default_rng(1).normal(size=(2, 6, 3))
        out, _ = gru_forward(x, params, config)
        assert np.allclose(out, 0.0)

    def test_t1_equals_single_cell(self):
        store, config, params = _gru_setup(3, 4, layers=1, seed=5)
        x = np.random.default_rng(2).normal(size=(1, 1, 3))
        out, _ = gru_forward(x, params, config)
        # manual cell evaluation with zero initial state
        cell = params[0]["fwd"]
        w_ih, w_hh = cell["w_ih"].value, cell["w_hh"].value
        b_ih, b_hh = cell["b_ih"].value, cell["b_hh"].value
        gi = x[0, 0] @ w_ih.T + b_ih
        gh = b_hh.copy()
        r = sigmoid(gi[:4] + gh[:4])
        z = sigmoid(gi[4:8] + gh[4:8])
        n = np.tanh(gi[8:] + r * gh[8:])
        expected = (1.0 - z) * n
        assert np.allclose(out[0, 0], expected, atol=1e-14)

    def test_gradients_match_finite_differences(self):
        store, config, params = _gru_setup(3, 4, layers=2, seed=9)
        rng = np.random.default_rng(11)
        x = rng.normal(size=(1, 5, 3))
        target = rng.normal(size=(1, 5, 4))

        def loss_only():
            out, _ = gru_forward(x, params, config)
            return float(np.sum((out - target) ** 2))

        def loss_and_grad():
            out, cache = gru_forward(x, params, config)
            gru_backward(2.0 * (out - target), cache, params)
            return float(np.sum((out - target) ** 2))

        report = grad_check(loss_only, loss_and_grad, store, tolerance=1e-4)
        assert report.passed, report.summary()

    def test_input_gradient_matches_finite_differences(self):
        store, config, params = _gru_setup(2, 3, layers=1, seed=4)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1, 4, 2))
        out, cache = gru_forward(x, params, config)
        dx = gru_backward(np.ones_like(out), cache, params)
        eps = 1e-6
        for t in range(4):
            for d in range(2):
                x2 = x.copy()
                x2[0, t, d] += eps
                up, _ = gru_forward(x2, params, config)
                x2[0, t, d] -= 2 * eps
                down, _ = gru_forward(x2, params, config)
                numeric = (np.sum(up) - np.sum(down)) / (2 * eps)
                assert abs(numeric - dx[0, t, d]) < 1e-7

    def test_dropout_reproducible_under_seed(self):
        store, config, params = _gru_setup(3, 4, layers=2, seed=0, dropout=0.5)
        x = np.random.default_rng(3).normal(size=(2, 5, 3))
        out1, _ = gru_forward(x, params, config, train=True,
                              rng=np.random.default_rng(123))
        out2, _ = gru_forward(x, params, config, train=True,
                              rng=np.random.default_rng(123))
        out3, _ = gru_forward(x, params, config, train=True,
                              rng=np.random.default_rng(124))
        assert np.array_equal(out1, out2)
        assert not np.array_equal(out1, out3)

    def test_eval_mode_deterministic(self):
        store, config, params = _gru_setup(3, 4, layers=2, seed=0, dropout=0.5)
        x = np.random.default_rng(3).normal(size=(2, 5, 3))
        out1, _ = gru_forward(x, params, config, train=False)
        out2, _ = gru_forward(x, params, config, train=False)
        assert np.array_equal(out1, out2)

    def test_bidirectional_width_and_gradients(self):
        store = ParameterStore()
        config = GruLayerConfig(
            input_dim=3, hidden_dim=4, num_layers=2,
            inter_layer_dropout=0.0, bidirectional=True,
        )
        params = gru_init(store, "gru", config, np.random.default_rng(2))
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 5, 3))
        out, _ = gru_forward(x, params, config)
        assert out.shape == (2, 5, 8)
        target = rng.normal(size=out.shape)

        def loss_only():
            y, _ = gru_forward(x, params, config)
            return float(np.sum((y - target) ** 2))

        def loss_and_grad():
            y, cache = gru_forward(x, params, config)
            gru_backward(2.0 * (y - target), cache, params)
            return float(np.sum((y - target) ** 2))

        report = grad_check(loss_only, loss_and_grad, store, tolerance=1e-4)
        assert report.passed, report.summary()

    def test_bidirectional_reverse_direction_sees_future(self):
        # flipping a late timestep must change the reverse states of the
        # first timestep
        store = ParameterStore()
        config = GruLayerConfig(
            input_dim=2, hidden_dim=3, num_layers=1,
            inter_layer_dropout=0.0, bidirectional=True,
        )
        params = gru_init(store, "gru", config, np.random.default_rng(4))
        x = np.random.default_rng(5).normal(size=(1, 6, 2))
        base, _ = gru_forward(x, params, config)
        x2 = x.copy()
        x2[0, -1] += 1.0
        bumped, _ = gru_forward(x2, params, config)
        assert np.array_equal(base[0, 0, :3], bumped[0, 0, :3])  # forward half
        assert not np.array_equal(base[0, 0, 3:], bumped[0, 0, 3:])


class TestAttention:
    def _params(self, h, seed=0, zero_context=False):
        store = ParameterStore()
        rng = np.random.default_rng(seed)
        w = store.xavier("w", (h, h), rng)
        b = store.add("b", rng.normal(size=h))
        c = store.zeros("c", (h,)) if zero_context else store.xavier("c", (h,), rng)
        return store, w, b, c

    def test_zero_context_gives_row_mean(self):
        store, w, b, c = self._params(3, zero_context=True)
        h = np.random.default_rng(1).normal(size=(2, 5, 3))
        y, alpha, _ = attention_forward(h, w, b, c)
        assert np.allclose(alpha, 0.2)
        assert np.allclose(y, h.mean(axis=1))

    def test_t1_passthrough(self):
        store, w, b, c = self._params(4, seed=2)
        h = np.random.default_rng(2).normal(size=(3, 1, 4))
        y, alpha, _ = attention_forward(h, w, b, c)
        assert np.allclose(alpha, 1.0)
        assert np.allclose(y, h[:, 0, :])

    def test_matches_scalar_reference(self):
        # independent scalar evaluation of the published pooling formula
        store, w, b, c = self._params(2, seed=7)
        h = np.random.default_rng(8).normal(size=(1, 3, 2))
        y, alpha, _ = attention_forward(h, w, b, c)

        scores = []
        for t in range(3):
            u = [
                math.tanh(sum(w.value[i, j] * h[0, t, j] for j in range(2)) + b.value[i])
                for i in range(2)
            ]
            scores.append(sum(u[i] * c.value[i] for i in range(2)))
        exps = [math.exp(s - max(scores)) for s in scores]
        weights = [e / sum(exps) for e in exps]
        expected = [
            sum(weights[t] * h[0, t, i] for t in range(3)) for i in range(2)
        ]
        assert np.allclose(alpha[0], weights, atol=1e-12)
        assert np.allclose(y[0], expected, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        store, w, b, c = self._params(3, seed=3)
        h = np.random.default_rng(4).normal(size=(2, 4, 3))
        target = np.random.default_rng(5).normal(size=(2, 3))

        def loss_only():
            y, _, _ = attention_forward(h, w, b, c)
            return float(np.sum((y - target) ** 2))

        def loss_and_grad():
            y, _, cache = attention_forward(h, w, b, c)
            attention_backward(2.0 * (y - target), cache, w, b, c)
            return float(np.sum((y - target) ** 2))

        report = grad_check(loss_only, loss_and_grad, store, tolerance=1e-6)
        assert report.passed, report.summary()

    def test_softmax_weights_simplex(self):
        store, w, b, c = self._params(3, seed=9)
        h = np.random.default_rng(10).normal(size=(4, 7, 3)) * 5
        _, alpha, _ = attention_forward(h, w, b, c)
        assert np.all(alpha > 0)
        assert np.allclose(alpha.sum(axis=1), 1.0, atol=1e-12)


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        store = ParameterStore()
        p = store.add("p", np.array([1.0, -2.0]))
        opt = Adam(store, lr=1e-2, clip=None)
        opt.step()
        assert np.array_equal(p.value, [1.0, -2.0])

    def test_single_step_matches_hand_computation(self):
        store = ParameterStore()
        p = store.add("p", np.array([0.5]))
        p.grad[...] = 1.0
        opt = Adam(store, lr=1e-4, clip=10.0)
        opt.step()
        # t=1: m_hat = g = 1, v_hat = g^2 = 1 after bias correction
        expected = 0.5 - 1e-4 * 1.0 / (math.sqrt(1.0) + 1e-8)
        assert p.value[0] == pytest.approx(expected, abs=1e-15)

    def test_global_norm_clipping(self):
        store = ParameterStore()
        a = store.add("a", np.zeros(3))
        b = store.add("b", np.zeros(4))
        a.grad[...] = 6.0
        b.grad[...] = 4.0
        norm = math.sqrt(3 * 36 + 4 * 16)
        pre = clip_global_norm(store, 1e-4)
        assert pre == pytest.approx(norm)
        post = math.sqrt(sum(float(np.sum(p.grad**2)) for p in store))
        assert post == pytest.approx(1e-4, rel=1e-9)

    def test_non_finite_gradient_rejected(self):
        store = ParameterStore()
        p = store.add("p", np.zeros(2))
        p.grad[0] = np.nan
        with pytest.raises(NonFiniteGradient):
            Adam(store).step()


class TestGradCheckHarness:
    def _linear_mse(self, seed=0):
        store = ParameterStore()
        rng = np.random.default_rng(seed)
        w = store.xavier("w", (2, 3), rng)
        b = store.zeros("b", (2,))
        x = rng.normal(size=(4, 3))
        target = rng.normal(size=(4, 2))
        return store, w, b, x, target

    def test_linear_mse_tight_tolerance(self):
        store, w, b, x, target = self._linear_mse()

        def loss_only():
            y, _ = linear_forward(x, w, b)
            return float(np.mean((y - target) ** 2))

        def loss_and_grad():
            y, cache = linear_forward(x, w, b)
            linear_backward(2.0 * (y - target) / y.size, cache, w, b)
            return float(np.mean((y - target) ** 2))

        report = grad_check(loss_only, loss_and_grad, store, tolerance=1e-6)
        assert report.passed, report.summary()

    def test_gru_attention_nll_stack(self):
        store = ParameterStore()
        rng = np.random.default_rng(21)
        config = GruLayerConfig(input_dim=3, hidden_dim=4, num_layers=2,
                                inter_layer_dropout=0.0)
        layers = gru_init(store, "gru", config, rng)
        w = store.xavier("att.w", (4, 4), rng)
        b = store.zeros("att.b", (4,))
        c = store.xavier("att.c", (4,), rng)
        fw = store.xavier("fc.w", (3, 4), rng)
        fb = store.zeros("fc.b", (3,))
        x = rng.normal(size=(2, 7, 3))
        labels = np.array([2, 1])

        def forward():
            hidden, gru_cache = gru_forward(x, layers, config)
            y, _, att_cache = attention_forward(hidden, w, b, c)
            logits, fc_cache = linear_forward(y, fw, fb)
            log_probs = log_softmax(logits, axis=1)
            return log_probs, (gru_cache, att_cache, fc_cache)

        def loss_only():
            log_probs, _ = forward()
            per, _ = nll_sum_grad(log_probs, labels, 3)
            return float(per.mean())

        def loss_and_grad():
            log_probs, (gru_cache, att_cache, fc_cache) = forward()
            per, dlogp = nll_sum_grad(log_probs, labels, 3)
            dlogp = dlogp / len(labels)
            dlogits = dlogp - np.exp(log_probs) * dlogp.sum(axis=1, keepdims=True)
            dy = linear_backward(dlogits, fc_cache, fw, fb)
            dh = attention_backward(dy, att_cache, w, b, c)
            gru_backward(dh, gru_cache, layers)
            return float(per.mean())

        report = grad_check(loss_only, loss_and_grad, store, tolerance=1e-4)
        assert report.passed, report.summary()

    def test_corrupted_gradient_detected(self):
        store, w, b, x, target = self._linear_mse(seed=5)

        def loss_only():
            y, _ = linear_forward(x, w, b)
            return float(np.mean((y - target) ** 2))

        def corrupted_grad():
            y, cache = linear_forward(x, w, b)
            linear_backward(2.0 * (y - target) / y.size, cache, w, b)
            w.grad[0, 0] += 0.1
            return float(np.mean((y - target) ** 2))

        report = grad_check(loss_only, corrupted_grad, store, tolerance=1e-4)
        assert not report.passed
        assert any(f.param == "w" and f.index == (0, 0) for f in report.failures)

    def test_subsampling_above_entry_budget(self):
        store = ParameterStore()
        rng = np.random.default_rng(1)
        w = store.xavier("w", (40, 40), rng)
        x = rng.normal(size=(2, 40))

        def loss_only():
            y, _ = linear_forward(x, w, None)
            return float(np.sum(y**2))

        def loss_and_grad():
            y, cache = linear_forward(x, w, None)
            linear_backward(2.0 * y, cache, w, None)
            return float(np.sum(y**2))

        report = grad_check(loss_only, loss_and_grad, store, max_entries=100)
        assert report.n_checked == 100
        assert report.passed


class TestActivations:
    def test_softmax_simplex_and_positive(self):
        x = np.random.default_rng(0).normal(size=(10, 9)) * 20
        s = softmax(x, axis=1)
        assert np.all(s > 0)
        assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12)

    def test_log_softmax_consistent(self):
        x = np.random.default_rng(1).normal(size=(4, 5))
        assert np.allclose(np.exp(log_softmax(x)), softmax(x), atol=1e-12)

    def test_sigmoid_extremes_stable(self):
        v = sigmoid(np.array([-800.0, 0.0, 800.0]))
        assert v[0] == 0.0 and v[1] == 0.5 and v[2] == 1.0

    def test_dropout_scaling(self):
        x = np.ones((1000, 10))
        out, mask = dropout_forward(x, 0.3, True, np.random.default_rng(0))
        kept = out[out > 0]
        assert np.allclose(kept, 1.0 / 0.7)
        assert abs(out.mean() - 1.0) < 0.05


def test_checkpoint_roundtrip(tmp_path):
    store = ParameterStore()
    rng = np.random.default_rng(13)
    store.xavier("alpha.w", (3, 4), rng)
    store.zeros("beta.b", (5,))
    store.add("gamma", rng.normal(size=(2, 2, 2)))
    path = tmp_path / "model.bin"
    save_checkpoint(store, path)
    values = load_checkpoint(path)
    assert set(values) == {"alpha.w", "beta.b", "gamma"}
    for name, value in values.items():
        assert np.array_equal(value, store[name].value)


def test_checkpoint_deterministic_bytes(tmp_path):
    store = ParameterStore()
    store.add("z", np.array([1.5, 2.5]))
    store.add("a", np.eye(2))
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(store, p1)
    save_checkpoint(store, p2)
    assert p1.read_bytes() == p2.read_bytes()
