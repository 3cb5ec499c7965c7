import numpy as np
import pytest

from shredkit.errors import DivergenceError, ShapeError
from shredkit.network import (
    ShredModel,
    ShredRegressor,
    TrainConfig,
    decoder_forward,
    gradients,
    loss,
    lstm_forward,
    predict,
    train,
)


def tiny_model(seed=0):
    return ShredModel(n_sensors=2, n_outputs=3, lags=3, hidden_size=4,
                      decoder_sizes=(5, 6), seed=seed)


def zero_params(model):
    for v in model.params.values():
        v[...] = 0.0
    return model


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestLstmForward:
    def test_zero_parameters_give_zero_latent(self):
        model = zero_params(tiny_model())
        rng = np.random.default_rng(0)
        window = rng.standard_normal((model.window_length, model.n_sensors))
        np.testing.assert_array_equal(lstm_forward(model, window), np.zeros(4))

    def test_single_cell_hand_computation(self):
        # 1 hidden unit, 1 step, hand-set gate weights through both layers
        model = ShredModel(n_sensors=1, n_outputs=1, lags=0, hidden_size=1,
                           decoder_sizes=(2, 2), seed=0)
        w1 = np.array([[0.3], [-0.2], [0.5], [0.7]])          # x weights, h weight col unused at t=0
        model.params["lstm1_w"][...] = np.hstack([w1, np.zeros((4, 1))])
        model.params["lstm1_b"][...] = np.array([[0.1], [0.2], [-0.1], [0.05]])
        w2 = np.array([[0.4], [0.6], [-0.3], [0.2]])
        model.params["lstm2_w"][...] = np.hstack([w2, np.zeros((4, 1))])
        model.params["lstm2_b"][...] = 0.0
        x = 0.8
        # layer 1: gates on x only (h0 = c0 = 0)
        i1 = sigmoid(0.3 * x + 0.1)
        f1 = sigmoid(-0.2 * x + 0.2)
        o1 = sigmoid(0.5 * x - 0.1)
        g1 = np.tanh(0.7 * x + 0.05)
        c1 = i1 * g1
        h1 = o1 * np.tanh(c1)
        # layer 2 takes h1 as input
        i2 = sigmoid(0.4 * h1)
        f2 = sigmoid(0.6 * h1)
        o2 = sigmoid(-0.3 * h1)
        g2 = np.tanh(0.2 * h1)
        c2 = i2 * g2
        h2 = o2 * np.tanh(c2)
        z = lstm_forward(model, np.array([[x]]))
        assert z[0] == pytest.approx(h2, abs=1e-12)

    def test_padding_is_not_invariant(self):
        # replicating the first column longer changes the latent state, which
        # is why the window length is pinned to lags + 1
        short = ShredModel(n_sensors=2, n_outputs=3, lags=3, hidden_size=4,
                           decoder_sizes=(5, 6), seed=7)
        longer = ShredModel(n_sensors=2, n_outputs=3, lags=6, hidden_size=4,
                            decoder_sizes=(5, 6), seed=7)
        rng = np.random.default_rng(1)
        window = rng.standard_normal((4, 2))
        extended = np.vstack([np.tile(window[0], (3, 1)), window])
        z_short = lstm_forward(short, window)
        z_long = lstm_forward(longer, extended)
        assert not np.allclose(z_short, z_long)

    def test_shape_error(self):
        model = tiny_model()
        with pytest.raises(ShapeError):
            lstm_forward(model, np.zeros((2, 2)))


class TestDecoderForward:
    def test_zero_weights_yield_output_bias(self):
        model = zero_params(tiny_model())
        model.params["dec3_b"][:, 0] = [1.0, -2.0, 3.0]
        out = decoder_forward(model, np.zeros(4))
        np.testing.assert_array_equal(out, [1.0, -2.0, 3.0])

    def test_hand_computed_ladder(self):
        # 1-wide ladder with known weights: out = w3*relu(w2*relu(w1*z+b1)+b2)+b3
        model = ShredModel(n_sensors=1, n_outputs=1, lags=0, hidden_size=1,
                           decoder_sizes=(1, 1), seed=0)
        model.params["dec1_w"][...] = 2.0
        model.params["dec1_b"][...] = -0.5
        model.params["dec2_w"][...] = -3.0
        model.params["dec2_b"][...] = 4.0
        model.params["dec3_w"][...] = 0.5
        model.params["dec3_b"][...] = 0.25
        z = 1.2
        expected = 0.5 * max(-3.0 * max(2.0 * z - 0.5, 0.0) + 4.0, 0.0) + 0.25
        assert decoder_forward(model, [z])[0] == pytest.approx(expected, abs=1e-12)

    def test_finite_output(self):
        model = tiny_model()
        out = decoder_forward(model, np.random.default_rng(2).standard_normal(4))
        assert np.isfinite(out).all()


class TestLoss:
    def test_zero_when_prediction_equals_target(self):
        model = tiny_model()
        rng = np.random.default_rng(3)
        windows = rng.standard_normal((5, 4, 2))
        targets = predict(model, windows).T
        assert loss(model, windows, targets) == pytest.approx(0.0, abs=1e-24)

    def test_norm_two_residual_gives_four(self):
        model = zero_params(tiny_model())
        model.params["dec3_b"][:, 0] = [2.0, 0.0, 0.0]   # prediction norm 2, target 0
        window = np.zeros((1, 4, 2))
        assert loss(model, window, np.zeros((1, 3))) == pytest.approx(4.0)

    def test_matches_naive_loop(self):
        model = tiny_model(seed=5)
        rng = np.random.default_rng(4)
        windows = rng.standard_normal((7, 4, 2))
        targets = rng.standard_normal((7, 3))
        expected = 0.0
        for k in range(7):
            pred = decoder_forward(model, lstm_forward(model, windows[k]))
            expected += np.sum((pred - targets[k]) ** 2)
        expected /= 7
        assert loss(model, windows, targets) == pytest.approx(expected, rel=1e-12)


class TestGradients:
    def test_against_central_finite_differences(self):
        # relative error is per parameter block: max |g - fd| over the block,
        # normalised by the block's largest gradient magnitude (elementwise
        # ratios are meaningless below the h=1e-6 cancellation noise floor)
        model = tiny_model(seed=11)
        rng = np.random.default_rng(12)
        windows = rng.standard_normal((4, 4, 2))
        targets = rng.standard_normal((4, 3))
        grads = gradients(model, windows, targets)
        h = 1e-6
        worst = 0.0
        for name, g in grads.items():
            p = model.params[name]
            fd = np.empty_like(p)
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                up = loss(model, windows, targets)
                p[idx] = orig - h
                down = loss(model, windows, targets)
                p[idx] = orig
                fd[idx] = (up - down) / (2 * h)
            scale = max(np.abs(g).max(), np.abs(fd).max(), 1e-12)
            worst = max(worst, float(np.abs(g - fd).max() / scale))
        assert worst < 1e-5

    def test_finite_differences_with_output_transform(self):
        # the affine output map participates in the loss and its gradients
        model = tiny_model(seed=31)
        rng = np.random.default_rng(32)
        model.output_shift[:, 0] = rng.standard_normal(3)
        model.output_scale[:, 0] = 0.5 + rng.random(3)
        windows = rng.standard_normal((3, 4, 2))
        targets = rng.standard_normal((3, 3))
        grads = gradients(model, windows, targets)
        h = 1e-6
        for name in ("dec3_w", "lstm1_w"):
            p = model.params[name]
            fd = np.empty_like(p)
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                up = loss(model, windows, targets)
                p[idx] = orig - h
                down = loss(model, windows, targets)
                p[idx] = orig
                fd[idx] = (up - down) / (2 * h)
            scale = max(np.abs(grads[name]).max(), np.abs(fd).max(), 1e-12)
            assert np.abs(grads[name] - fd).max() / scale < 1e-5

    def test_zero_residual_gives_zero_gradients(self):
        model = tiny_model(seed=13)
        rng = np.random.default_rng(14)
        windows = rng.standard_normal((3, 4, 2))
        targets = predict(model, windows).T
        grads = gradients(model, windows, targets)
        for g in grads.values():
            assert np.abs(g).max() <= 1e-12

    def test_doubling_residual_doubles_output_layer_gradient(self):
        model = tiny_model(seed=15)
        rng = np.random.default_rng(16)
        windows = rng.standard_normal((3, 4, 2))
        out = predict(model, windows).T
        targets = rng.standard_normal((3, 3))
        doubled = out - 2.0 * (out - targets)
        g1 = gradients(model, windows, targets)
        g2 = gradients(model, windows, doubled)
        np.testing.assert_allclose(g2["dec3_w"], 2.0 * g1["dec3_w"], rtol=1e-12)
        np.testing.assert_allclose(g2["dec3_b"], 2.0 * g1["dec3_b"], rtol=1e-12)


def make_scalar_tracking_problem(n=120, lags=5):
    """Rank-1 sanity task: the target equals the current measurement."""
    t = np.linspace(0, 4 * np.pi, n)
    y = 0.5 + 0.4 * np.sin(t)
    raw = y[None, :]
    from shredkit.sensing import lag_embed

    windows = lag_embed(raw, lags)
    targets = y[:, None]
    idx = np.arange(n)
    rng = np.random.default_rng(0)
    rng.shuffle(idx)
    n_train = int(round(0.75 * n))
    return windows, targets, np.sort(idx[:n_train]), np.sort(idx[n_train:])


class TestTraining:
    def test_rank_one_sanity_converges(self):
        windows, targets, tr, va = make_scalar_tracking_problem()
        model = ShredModel(n_sensors=1, n_outputs=1, lags=5, hidden_size=8,
                           decoder_sizes=(12, 16), seed=1)
        cfg = TrainConfig(learning_rate=5e-3, epochs=200, batch_size=32,
                          patience=200, seed=1)
        model, history = train(model, windows, targets, tr, va, cfg)
        assert min(history.valid_loss) < 1e-4
        assert min(history.valid_loss) <= history.valid_loss[0]

    def test_standardized_training_predicts_in_raw_space(self):
        # targets with wildly different row scales; predictions come back raw
        windows, targets, tr, va = make_scalar_tracking_problem()
        big = np.hstack([targets * 100.0, targets * 0.01])
        model = ShredModel(1, 2, lags=5, hidden_size=8, decoder_sizes=(12, 16), seed=6)
        cfg = TrainConfig(learning_rate=5e-3, epochs=120, batch_size=32,
                          patience=120, seed=6)
        model, history = train(model, windows, big, tr, va, cfg,
                               standardize_targets=True)
        pred = predict(model, windows)
        rel0 = np.abs(pred[0] - big[:, 0]).mean() / np.abs(big[:, 0]).mean()
        rel1 = np.abs(pred[1] - big[:, 1]).mean() / np.abs(big[:, 1]).mean()
        assert rel0 < 0.05 and rel1 < 0.05
        assert model.output_scale[0, 0] == pytest.approx(1e4 * model.output_scale[1, 0], rel=1e-9)

    def test_zero_learning_rate_changes_nothing(self):
        windows, targets, tr, va = make_scalar_tracking_problem(n=40)
        model = ShredModel(1, 1, lags=5, hidden_size=4, decoder_sizes=(5, 6), seed=2)
        before = {k: v.copy() for k, v in model.params.items()}
        cfg = TrainConfig(learning_rate=0.0, epochs=5, batch_size=16, patience=5, seed=0)
        model, history = train(model, windows, targets, tr, va, cfg)
        for k, v in model.params.items():
            np.testing.assert_array_equal(v, before[k])
        assert len(set(history.valid_loss)) == 1

    def test_deterministic_history(self):
        windows, targets, tr, va = make_scalar_tracking_problem(n=60)

        def run():
            model = ShredModel(1, 1, lags=5, hidden_size=4, decoder_sizes=(5, 6), seed=3)
            cfg = TrainConfig(learning_rate=1e-3, epochs=12, batch_size=16,
                              patience=12, seed=3)
            _, history = train(model, windows, targets, tr, va, cfg)
            return history

        a, b = run(), run()
        assert a.train_loss == b.train_loss
        assert a.valid_loss == b.valid_loss

    def test_divergence_detected(self):
        windows, targets, tr, va = make_scalar_tracking_problem(n=40)
        model = ShredModel(1, 1, lags=5, hidden_size=4, decoder_sizes=(5, 6), seed=4)
        # a step this large overflows the decoder composition to inf
        cfg = TrainConfig(learning_rate=1e200, epochs=50, batch_size=16,
                          patience=50, seed=4)
        with pytest.raises(DivergenceError):
            train(model, windows, targets, tr, va, cfg)

    def test_patience_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=10, patience=20)


class TestPredict:
    def test_matches_per_sample_composition(self):
        model = tiny_model(seed=21)
        rng = np.random.default_rng(22)
        windows = rng.standard_normal((9, 4, 2))
        batched = predict(model, windows)
        assert batched.shape == (3, 9)
        for k in range(9):
            single = decoder_forward(model, lstm_forward(model, windows[k]))
            np.testing.assert_allclose(batched[:, k], single, rtol=1e-12, atol=1e-14)

    def test_identical_windows_identical_columns(self):
        model = tiny_model(seed=23)
        window = np.random.default_rng(24).standard_normal((1, 4, 2))
        windows = np.repeat(window, 6, axis=0)
        out = predict(model, windows)
        for k in range(1, 6):
            np.testing.assert_array_equal(out[:, k], out[:, 0])

    def test_constant_bias_for_zero_parameters(self):
        model = zero_params(tiny_model())
        model.params["dec3_b"][:, 0] = [5.0, 6.0, 7.0]
        windows = np.random.default_rng(25).standard_normal((4, 4, 2))
        out = predict(model, windows)
        np.testing.assert_array_equal(out, np.tile([[5.0], [6.0], [7.0]], (1, 4)))

    def test_chunking_consistent(self):
        model = tiny_model(seed=26)
        windows = np.random.default_rng(27).standard_normal((11, 4, 2))
        np.testing.assert_array_equal(
            predict(model, windows, chunk_size=4), predict(model, windows, chunk_size=100)
        )


class TestRegressorFacade:
    def test_fit_predict_roundtrip(self):
        windows, targets, tr, va = make_scalar_tracking_problem(n=60)
        reg = ShredRegressor(lags=5, hidden_size=8, decoder_sizes=(10, 12),
                             learning_rate=5e-3, epochs=40, batch_size=16,
                             patience=40, seed=5)
        reg.fit(windows, targets, train_idx=tr, valid_idx=va)
        pred = reg.predict(windows)
        assert pred.shape == targets.shape

    def test_unfitted_predict_raises(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            ShredRegressor().predict(np.zeros((2, 31, 3)))

    def test_get_params_roundtrip(self):
        reg = ShredRegressor(lags=7, seed=9)
        params = reg.get_params()
        assert params["lags"] == 7 and params["seed"] == 9
