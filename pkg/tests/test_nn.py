"""Recurrent layers (scalar oracles + gradient checks), losses, optimizer."""

import io
import math

import numpy as np
import pytest

from gaitforge.nn import (
    AdamState,
    DenseLayer,
    EarlyStopping,
    GruLayer,
    KamRegressor,
    LstmLayer,
    PlateauScheduler,
    SequenceClassifier,
    adam_step,
    dropout_apply,
    finite_difference_check,
    load_model,
    log_softmax,
    mae_grad,
    mae_loss,
    save_model,
    softmax,
    weighted_cross_entropy,
    weighted_cross_entropy_grad,
)


def zero_params(layer):
    for p in layer.params.values():
        p[...] = 0.0
    return layer


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_gru(params, x_seq, h0):
    """Plain-Python per-unit recomputation of the GRU forward recursion."""
    T, I = len(x_seq), len(x_seq[0])
    H = len(h0)
    h = list(h0)
    out = []
    for t in range(T):
        x = x_seq[t]
        new_h = []
        for j in range(H):
            a_r = sum(params["w_r"][j][i] * x[i] for i in range(I)) + params["b_ir"][j] \
                + sum(params["u_r"][j][k] * h[k] for k in range(H)) + params["b_hr"][j]
            a_z = sum(params["w_z"][j][i] * x[i] for i in range(I)) + params["b_iz"][j] \
                + sum(params["u_z"][j][k] * h[k] for k in range(H)) + params["b_hz"][j]
            m = sum(params["u_n"][j][k] * h[k] for k in range(H)) + params["b_hn"][j]
            a_n = sum(params["w_n"][j][i] * x[i] for i in range(I)) + params["b_in"][j] \
                + _sig(a_r) * m
            n = math.tanh(a_n)
            z = _sig(a_z)
            new_h.append((1.0 - z) * n + z * h[j])
        h = new_h
        out.append(list(h))
    return out


def scalar_lstm(params, x_seq, h0, c0):
    """Plain-Python per-unit recomputation of the LSTM forward recursion."""
    T, I = len(x_seq), len(x_seq[0])
    H = len(h0)
    h, c = list(h0), list(c0)
    out = []
    for t in range(T):
        x = x_seq[t]
        new_h, new_c = [], []
        for j in range(H):
            def gate(name):
                return sum(params[f"w_{name}"][j][i] * x[i] for i in range(I)) \
                    + sum(params[f"u_{name}"][j][k] * h[k] for k in range(H)) \
                    + params[f"b_{name}"][j]

            i_g = _sig(gate("i"))
            f_g = _sig(gate("f"))
            g_g = math.tanh(gate("g"))
            o_g = _sig(gate("o"))
            cj = f_g * c[j] + i_g * g_g
            new_c.append(cj)
            new_h.append(o_g * math.tanh(cj))
        h, c = new_h, new_c
        out.append(list(h))
    return out


class TestGruForward:
    def test_zero_params_zero_state(self):
        layer = zero_params(GruLayer(3, 4))
        x = np.random.default_rng(0).normal(size=(6, 3))
        h_seq, _ = layer.forward(x)
        np.testing.assert_array_equal(h_seq, 0.0)

    def test_zero_params_unit_state(self):
        # z = 0.5, n = 0 => h1 = 0.5 per unit
        layer = zero_params(GruLayer(3, 4))
        h_seq, _ = layer.forward(np.zeros((1, 3)), h0=np.ones(4))
        np.testing.assert_allclose(h_seq[0], 0.5)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(42)
        layer = GruLayer(3, 4, rng)
        x = rng.normal(size=(5, 3))
        h0 = rng.normal(size=4)
        h_seq, _ = layer.forward(x, h0=h0)
        oracle = scalar_gru({k: v.tolist() for k, v in layer.params.items()},
                            x.tolist(), h0.tolist())
        np.testing.assert_allclose(h_seq, oracle, atol=1e-12)

    def test_shape_mismatch(self):
        layer = GruLayer(3, 4)
        with pytest.raises(ValueError):
            layer.forward(np.zeros((5, 2)))

    def test_bounded_from_zero_state(self):
        rng = np.random.default_rng(5)
        layer = GruLayer(4, 6, rng)
        h_seq, _ = layer.forward(rng.normal(scale=5.0, size=(50, 4)))
        assert np.abs(h_seq).max() <= 1.0 + 1e-12


class TestLstmForward:
    def test_zero_params_zero_state(self):
        layer = zero_params(LstmLayer(3, 4))
        h_seq, _ = layer.forward(np.random.default_rng(0).normal(size=(6, 3)))
        np.testing.assert_array_equal(h_seq, 0.0)

    def test_zero_params_unit_cell(self):
        # c1 = 0.5, h1 = 0.5 * tanh(0.5) per unit
        layer = zero_params(LstmLayer(3, 4))
        h_seq, cache = layer.forward(np.zeros((1, 3)), c0=np.ones(4))
        np.testing.assert_allclose(h_seq[0], 0.5 * math.tanh(0.5), atol=1e-15)
        np.testing.assert_allclose(cache.c[0], 0.5)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(43)
        layer = LstmLayer(3, 4, rng)
        x = rng.normal(size=(5, 3))
        h0 = rng.normal(size=4)
        c0 = rng.normal(size=4)
        h_seq, _ = layer.forward(x, h0=h0, c0=c0)
        oracle = scalar_lstm({k: v.tolist() for k, v in layer.params.items()},
                             x.tolist(), h0.tolist(), c0.tolist())
        np.testing.assert_allclose(h_seq, oracle, atol=1e-12)

    def test_output_bounded(self):
        # |h| = |o * tanh(c)| <= 1 regardless of input scale
        rng = np.random.default_rng(6)
        layer = LstmLayer(4, 6, rng)
        h_seq, _ = layer.forward(rng.normal(scale=20.0, size=(80, 4)))
        assert np.abs(h_seq).max() <= 1.0


def check_layer_grads(layer, x, upstream, eps=1e-5,
                      forward=lambda l, x: l.forward(x)):
    def loss_fn():
        h, cache = forward(layer, x)
        grads, _ = layer.backward(cache, upstream)
        return float((upstream * h).sum()), grads

    return finite_difference_check(loss_fn, layer.params, eps=eps)


class TestBackward:
    def test_gru_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            sizes = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
            layer = GruLayer(*sizes, rng)
            x = rng.normal(size=(int(rng.integers(1, 6)), 2, sizes[0]))
            upstream = rng.normal(size=(x.shape[0], 2, sizes[1]))
            errs = check_layer_grads(layer, x, upstream)
            assert max(errs.values()) < 1e-4, errs

    def test_lstm_finite_differences(self):
        rng = np.random.default_rng(8)
        for _ in range(3):
            sizes = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
            layer = LstmLayer(*sizes, rng)
            x = rng.normal(size=(int(rng.integers(1, 6)), 2, sizes[0]))
            upstream = rng.normal(size=(x.shape[0], 2, sizes[1]))
            errs = check_layer_grads(layer, x, upstream)
            assert max(errs.values()) < 1e-4, errs

    def test_dense_finite_differences(self):
        rng = np.random.default_rng(9)
        for act in ("relu", "linear", "softmax"):
            layer = DenseLayer(4, 3, activation=act, rng=rng)
            x = rng.normal(size=(6, 4))
            upstream = rng.normal(size=(6, 3))
            errs = check_layer_grads(layer, x, upstream)
            assert max(errs.values()) < 1e-4, (act, errs)

    def test_constant_head_zero_recurrent_grads(self):
        # Loss that ignores the output: every gradient must vanish.
        rng = np.random.default_rng(10)
        layer = GruLayer(3, 4, rng)
        x = rng.normal(size=(5, 3))
        _, cache = layer.forward(x)
        grads, _ = layer.backward(cache, np.zeros((5, 4)))
        for g in grads.values():
            np.testing.assert_array_equal(g, 0.0)

    def test_input_gradient(self):
        rng = np.random.default_rng(11)
        layer = LstmLayer(3, 4, rng)
        x = rng.normal(size=(4, 3))
        upstream = rng.normal(size=(4, 4))

        def loss_fn():
            h, cache = layer.forward(x)
            _, dx = layer.backward(cache, upstream)
            return float((upstream * h).sum()), {"x": dx}

        errs = finite_difference_check(loss_fn, {"x": x})
        assert errs["x"] < 1e-4

    def test_cache_model_mismatch(self):
        layer_a = GruLayer(3, 4)
        layer_b = GruLayer(3, 4)
        _, cache = layer_a.forward(np.zeros((2, 3)))
        with pytest.raises(ValueError, match="cache"):
            layer_b.backward(cache, np.zeros((2, 4)))

    def test_single_step_gru_equals_dense_gate_network(self):
        """At T=1 the recursion collapses to one dense gate block; compare
        against an independently coded single-step gradient."""
        rng = np.random.default_rng(12)
        layer = GruLayer(3, 4, rng)
        x = rng.normal(size=(1, 3))
        h0 = rng.normal(size=4)
        upstream = rng.normal(size=(1, 4))
        _, cache = layer.forward(x, h0=h0)
        grads, _ = layer.backward(cache, upstream)

        p = {k: v.copy() for k, v in layer.params.items()}
        xv, dh = x[0], upstream[0]
        a_r = p["w_r"] @ xv + p["b_ir"] + p["u_r"] @ h0 + p["b_hr"]
        a_z = p["w_z"] @ xv + p["b_iz"] + p["u_z"] @ h0 + p["b_hz"]
        r = 1.0 / (1.0 + np.exp(-a_r))
        z = 1.0 / (1.0 + np.exp(-a_z))
        m = p["u_n"] @ h0 + p["b_hn"]
        n = np.tanh(p["w_n"] @ xv + p["b_in"] + r * m)
        dz = dh * (h0 - n)
        dn = dh * (1.0 - z)
        da_n = dn * (1.0 - n * n)
        dm = da_n * r
        da_r = (da_n * m) * r * (1.0 - r)
        da_z = dz * z * (1.0 - z)
        np.testing.assert_allclose(grads["w_n"], np.outer(da_n, xv), atol=1e-10)
        np.testing.assert_allclose(grads["u_n"], np.outer(dm, h0), atol=1e-10)
        np.testing.assert_allclose(grads["w_r"], np.outer(da_r, xv), atol=1e-10)
        np.testing.assert_allclose(grads["u_z"], np.outer(da_z, h0), atol=1e-10)
        np.testing.assert_allclose(grads["b_hn"], dm, atol=1e-10)


class TestSoftmaxAndCrossEntropy:
    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(13)
        p = softmax(rng.normal(scale=10.0, size=(100, 5)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p >= 0.0)

    def test_softmax_shift_invariant(self):
        z = np.array([1.0, -2.0, 0.5, 3.0])
        np.testing.assert_allclose(softmax(z), softmax(z + 123.0), atol=1e-12)

    def test_uniform_logits_ln4(self):
        loss = weighted_cross_entropy(np.zeros(4), 1, np.ones(4))
        assert loss == pytest.approx(math.log(4.0), abs=1e-12)

    def test_confident_correct_is_tiny(self):
        logits = np.array([100.0, 0.0, 0.0, 0.0])
        assert weighted_cross_entropy(logits, 0, np.ones(4)) < 1e-6

    def test_weighted_mean_reduction(self):
        # p_target = 0.25 and w_target = 2: loss = 2 ln4 / 2 = ln 4
        logits = np.zeros(4)
        weights = np.array([1.0, 2.0, 1.0, 1.0])
        assert weighted_cross_entropy(logits, 1, weights) == \
            pytest.approx(math.log(4.0), abs=1e-12)

    def test_target_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            weighted_cross_entropy(np.zeros(4), 4, np.ones(4))

    def test_nonpositive_weights(self):
        with pytest.raises(ValueError, match="positive"):
            weighted_cross_entropy(np.zeros(4), 0, np.array([1.0, 0.0, 1.0, 1.0]))

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        logits = rng.normal(size=(6, 5))
        targets = rng.integers(0, 5, size=6)
        weights = rng.uniform(0.5, 3.0, size=5)
        grad = weighted_cross_entropy_grad(logits, targets, weights)
        eps = 1e-6
        for b in range(6):
            for c in range(5):
                hi = logits.copy()
                hi[b, c] += eps
                lo = logits.copy()
                lo[b, c] -= eps
                num = (weighted_cross_entropy(hi, targets, weights)
                       - weighted_cross_entropy(lo, targets, weights)) / (2 * eps)
                assert grad[b, c] == pytest.approx(num, abs=1e-8)


class TestMae:
    def test_exact(self):
        x = np.arange(101, dtype=float)
        assert mae_loss(x, x) == 0.0

    def test_constant_offset(self):
        x = np.arange(101, dtype=float)
        assert mae_loss(x + 2.5, x) == pytest.approx(2.5)

    def test_hand_case(self):
        assert mae_loss(np.array([0.0, 2.0]), np.array([1.0, 1.0])) == 1.0

    def test_subgradient_zero_at_ties(self):
        g = mae_grad(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.0, 5.0]))
        np.testing.assert_allclose(g, [0.0, 1 / 3, -1 / 3])


class TestAdam:
    def test_zero_gradient_no_motion(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState.for_params(params)
        adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert state.step == 1

    def test_first_step_magnitude_is_lr(self):
        params = {"w": np.zeros(4)}
        state = AdamState.for_params(params)
        adam_step(params, {"w": np.full(4, 3.7)}, state, lr=0.01)
        np.testing.assert_allclose(np.abs(params["w"]), 0.01, atol=1e-9)

    def test_opposing_gradients_bounded(self):
        params = {"w": np.array([0.5])}
        state = AdamState.for_params(params)
        g = np.array([2.0])
        adam_step(params, {"w": g}, state, lr=0.01)
        adam_step(params, {"w": -g}, state, lr=0.01)
        assert abs(params["w"][0] - 0.5) < 2 * 0.01


class TestDropout:
    def test_rate_zero_identity(self):
        x = np.random.default_rng(0).normal(size=(10, 10))
        out, mask = dropout_apply(x, 0.0, np.random.default_rng(1), training=True)
        np.testing.assert_array_equal(out, x)
        assert mask is None

    def test_inference_identity(self):
        x = np.random.default_rng(0).normal(size=(10, 10))
        out, mask = dropout_apply(x, 0.9, np.random.default_rng(1), training=False)
        np.testing.assert_array_equal(out, x)
        assert mask is None

    def test_statistics(self):
        rng = np.random.default_rng(2)
        x = np.full(1_000_000, 2.0)
        out, _ = dropout_apply(x, 0.5, rng, training=True)
        survivors = np.count_nonzero(out) / x.size
        assert survivors == pytest.approx(0.5, abs=0.002)
        assert out.mean() == pytest.approx(x.mean(), rel=0.01)


class TestPlateauScheduler:
    def test_improving_keeps_lr(self):
        sched = PlateauScheduler(0.08, patience=10)
        for loss in np.linspace(1.0, 0.1, 30):
            assert sched.step(float(loss)) == 0.08

    def test_ten_flat_epochs_halve(self):
        sched = PlateauScheduler(0.08, patience=10)
        sched.step(1.0)
        for k in range(9):
            assert sched.step(1.0) == 0.08
        assert sched.step(1.0) == 0.04

    def test_floor(self):
        sched = PlateauScheduler(2e-6, patience=1, min_lr=1e-6)
        sched.step(1.0)
        assert sched.step(1.0) == 1e-6
        assert sched.step(1.0) == 1e-6


class TestEarlyStopping:
    def test_monotone_decrease_never_stops(self):
        stop = EarlyStopping(patience=5)
        assert not any(stop.update(float(l)) for l in np.linspace(2.0, 0.1, 50))

    def test_flat_run_stops_at_epoch_six(self):
        stop = EarlyStopping(patience=5)
        assert stop.update(1.0) is False
        results = [stop.update(1.0) for _ in range(5)]
        assert results == [False, False, False, False, True]
        assert stop.best_epoch == 1
        assert stop.best_loss == 1.0

    def test_patience_one_immediate(self):
        stop = EarlyStopping(patience=1)
        stop.update(1.0)
        assert stop.update(1.1) is True

    def test_restores_best_params(self):
        stop = EarlyStopping(patience=2)
        params = {"w": np.array([1.0])}
        stop.update(1.0, params)
        params["w"][0] = 99.0
        stop.update(2.0, params)
        stop.update(2.0, params)
        stop.restore(params)
        assert params["w"][0] == 1.0


class TestCheckpointRoundTrip:
    def test_classifier_exact(self):
        rng = np.random.default_rng(20)
        model = SequenceClassifier(28, 16, 5, rng=rng, modality="pose")
        model.fit_normalization(rng.normal(size=(50, 60, 28)))
        buf = io.BytesIO()
        save_model(model, buf)
        back = load_model(buf.getvalue())
        assert isinstance(back, SequenceClassifier)
        assert back.modality == "pose"
        for k, p in model.all_params().items():
            np.testing.assert_array_equal(back.all_params()[k], p)
        x = rng.normal(size=(4, 60, 28))
        np.testing.assert_array_equal(back.probs(x), model.probs(x))

    def test_regressor_exact(self):
        rng = np.random.default_rng(21)
        model = KamRegressor(15, 8, 4, rng=rng, activity="walk")
        model.fit_normalization(rng.normal(size=(10, 101, 15)))
        model.fit_target_scale(rng.normal(scale=10.0, size=(10, 101)))
        buf = io.BytesIO()
        save_model(model, buf)
        back = load_model(buf.getvalue())
        assert isinstance(back, KamRegressor)
        assert back.target_scale == model.target_scale
        x = rng.normal(size=(3, 101, 15))
        np.testing.assert_array_equal(back.predict(x), model.predict(x))

    def test_bad_magic(self):
        with pytest.raises(ValueError, match="not a model checkpoint"):
            load_model(b"JUNKJUNKJUNKJUNK")

    def test_truncated(self):
        rng = np.random.default_rng(22)
        model = SequenceClassifier(4, 3, 5, rng=rng)
        buf = io.BytesIO()
        save_model(model, buf)
        with pytest.raises(ValueError, match="truncated"):
            load_model(buf.getvalue()[:-16])
