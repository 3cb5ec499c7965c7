"""Recurrent encoder + shallow decoder with hand-rolled reverse-mode gradients.

The model maps a window of the last lags+1 sensor vectors to the stacked
reduced coefficients at the window's final time: a 2-layer LSTM encodes the
window into a latent vector (the top layer's final hidden state), and a
3-affine-layer decoder with rectified-linear hidden activations maps the
latent vector to the output. Training minimises the mean squared l2 error
with adaptive-moment updates and early stopping on validation loss.

All compute is float64. Internally activations live in (features, batch)
layout so each gate block is a contiguous slab; backpropagation through time
runs over the window only (windows are independent samples, hidden state
starts at zero).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import DivergenceError, ShapeError
from .validation import check_fitted

# gate block order within the 4H rows: input, forget, output, candidate;
# sigmoid applies to the first three blocks in one contiguous call
_N_GATES = 4


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 1000
    batch_size: int = 64
    patience: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        for name in ("epochs", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.patience > self.epochs:
            raise ValueError("patience cannot exceed the epoch budget")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def n_epochs(self) -> int:
        return len(self.train_loss)


class ShredModel:
    """Parameter container for the encoder/decoder pair.

    Weights are uniform in +-1/sqrt(fan_in) per layer, biases start at zero;
    initialisation is deterministic per seed. ``output_shift``/``output_scale``
    hold a fixed affine map applied after the last layer (identity unless the
    trainer standardised its targets); they are not trained.
    """

    def __init__(self, n_sensors: int, n_outputs: int, lags: int = 30,
                 hidden_size: int = 64, decoder_sizes: tuple[int, int] = (350, 400),
                 seed: int = 0):
        if n_sensors < 1 or n_outputs < 1 or lags < 0 or hidden_size < 1:
            raise ValueError("model dimensions must be positive (lags >= 0)")
        self.n_sensors = int(n_sensors)
        self.n_outputs = int(n_outputs)
        self.lags = int(lags)
        self.hidden_size = int(hidden_size)
        self.decoder_sizes = (int(decoder_sizes[0]), int(decoder_sizes[1]))
        self.seed = int(seed)
        h = self.hidden_size
        d1, d2 = self.decoder_sizes
        rng = np.random.default_rng(seed)

        def uniform(rows, cols):
            bound = 1.0 / np.sqrt(cols)
            return rng.uniform(-bound, bound, size=(rows, cols))

        self.params: dict[str, np.ndarray] = {
            "lstm1_w": uniform(_N_GATES * h, self.n_sensors + h),
            "lstm1_b": np.zeros((_N_GATES * h, 1)),
            "lstm2_w": uniform(_N_GATES * h, 2 * h),
            "lstm2_b": np.zeros((_N_GATES * h, 1)),
            "dec1_w": uniform(d1, h),
            "dec1_b": np.zeros((d1, 1)),
            "dec2_w": uniform(d2, d1),
            "dec2_b": np.zeros((d2, 1)),
            "dec3_w": uniform(self.n_outputs, d2),
            "dec3_b": np.zeros((self.n_outputs, 1)),
        }
        self.output_shift = np.zeros((self.n_outputs, 1))
        self.output_scale = np.ones((self.n_outputs, 1))

    @property
    def window_length(self) -> int:
        return self.lags + 1

    def copy(self) -> "ShredModel":
        dup = ShredModel(self.n_sensors, self.n_outputs, self.lags,
                         self.hidden_size, self.decoder_sizes, self.seed)
        dup.params = {k: v.copy() for k, v in self.params.items()}
        dup.output_shift = self.output_shift.copy()
        dup.output_scale = self.output_scale.copy()
        return dup

    def set_params_from(self, params: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.params[k][...] = params[k]

    def apply_output_transform(self, net_out: np.ndarray) -> np.ndarray:
        return self.output_shift + self.output_scale * net_out

    def standardized_targets(self, y_cols: np.ndarray) -> np.ndarray:
        """Map raw targets (outputs, batch) into the trained network's space."""
        return (y_cols - self.output_shift) / self.output_scale


class _LayerWork:
    """Reusable buffers for one LSTM layer at a fixed (window, batch) size."""

    def __init__(self, n_in: int, h: int, t: int, b: int):
        g = _N_GATES * h
        self.gates = np.empty((t, g, b))
        self.cats = np.empty((t, n_in + h, b))
        self.c = np.empty((t, h, b))
        self.tanh_c = np.empty((t, h, b))
        self.h = np.empty((t, h, b))
        self.dg = np.empty((g, b))
        self.dh = np.empty((h, b))
        self.dc = np.empty((h, b))
        self.tmp = np.empty((h, b))
        self.dcat = np.empty((n_in + h, b))
        self.dw_step = np.empty((g, n_in + h))
        self.dh_top = np.zeros((t, h, b))


class _Workspace:
    def __init__(self, model: ShredModel, t: int, b: int):
        h = model.hidden_size
        self.t = t
        self.b = b
        self.layer1 = _LayerWork(model.n_sensors, h, t, b)
        self.layer2 = _LayerWork(h, h, t, b)


def _sigmoid_inplace(x: np.ndarray) -> None:
    # exp overflow at saturated gates is fine: inf -> 1/(1+inf) -> 0
    np.negative(x, out=x)
    with np.errstate(over="ignore"):
        np.exp(x, out=x)
    x += 1.0
    np.reciprocal(x, out=x)


def _layer_forward(x_steps, w, b, n_in: int, h: int, work: _LayerWork, t_n: int) -> None:
    """Run the gate recursion over t_n steps; x_steps[t] is (n_in, batch)."""
    h3 = 3 * h
    prev_h = None
    prev_c = None
    for t in range(t_n):
        cat = work.cats[t]
        cat[:n_in] = x_steps[t]
        cat[n_in:] = 0.0 if prev_h is None else prev_h
        g = work.gates[t]
        np.dot(w, cat, out=g)
        g += b
        _sigmoid_inplace(g[:h3])
        np.tanh(g[h3:], out=g[h3:])
        c = work.c[t]
        if prev_c is None:
            c[:] = 0.0
        else:
            np.multiply(g[h : 2 * h], prev_c, out=c)
        np.multiply(g[:h], g[h3:], out=work.tmp)
        c += work.tmp
        np.tanh(c, out=work.tanh_c[t])
        np.multiply(g[2 * h : h3], work.tanh_c[t], out=work.h[t])
        prev_h = work.h[t]
        prev_c = c


def _layer_backward(w, n_in: int, h: int, work: _LayerWork, t_n: int,
                    dw_out, db_out, store_dx: bool, dx_store=None) -> None:
    """Backpropagate through time given upstream grads in work.dh_top."""
    h3 = 3 * h
    dh = work.dh
    dh[:] = work.dh_top[t_n - 1]
    dc = work.dc
    dc[:] = 0.0
    tmp = work.tmp
    dw_out[:] = 0.0
    db_out[:] = 0.0
    for t in range(t_n - 1, -1, -1):
        g = work.gates[t]
        gi = g[:h]
        gf = g[h : 2 * h]
        go = g[2 * h : h3]
        gg = g[h3:]
        tc = work.tanh_c[t]
        dg = work.dg
        # output gate: dh * tanh(c) * o * (1 - o)
        do = dg[2 * h : h3]
        np.multiply(dh, tc, out=do)
        do *= go
        np.subtract(1.0, go, out=tmp)
        do *= tmp
        # cell grad gains dh * o * (1 - tanh(c)^2)
        np.multiply(tc, tc, out=tmp)
        np.subtract(1.0, tmp, out=tmp)
        tmp *= go
        tmp *= dh
        dc += tmp
        # input gate
        di = dg[:h]
        np.multiply(dc, gg, out=di)
        di *= gi
        np.subtract(1.0, gi, out=tmp)
        di *= tmp
        # candidate
        dgg = dg[h3:]
        np.multiply(gg, gg, out=tmp)
        np.subtract(1.0, tmp, out=tmp)
        tmp *= dc
        np.multiply(tmp, gi, out=dgg)
        # forget gate
        df = dg[h : 2 * h]
        if t > 0:
            np.multiply(dc, work.c[t - 1], out=df)
            df *= gf
            np.subtract(1.0, gf, out=tmp)
            df *= tmp
        else:
            df[:] = 0.0
        dc *= gf
        np.dot(dg, work.cats[t].T, out=work.dw_step)
        dw_out += work.dw_step
        db_out[:, 0] += dg.sum(axis=1)
        np.dot(w.T, dg, out=work.dcat)
        dh[:] = work.dcat[n_in:]
        if t > 0:
            dh += work.dh_top[t - 1]
        if store_dx:
            dx_store[t] = work.dcat[:n_in]


def _forward(model: ShredModel, x, ws: _Workspace, t_n: int):
    """Encoder + decoder forward; returns (out, decoder cache)."""
    p = model.params
    h = model.hidden_size
    _layer_forward(x, p["lstm1_w"], p["lstm1_b"], model.n_sensors, h, ws.layer1, t_n)
    _layer_forward(ws.layer1.h, p["lstm2_w"], p["lstm2_b"], h, h, ws.layer2, t_n)
    z = ws.layer2.h[t_n - 1]
    a1 = p["dec1_w"] @ z
    a1 += p["dec1_b"]
    r1 = np.maximum(a1, 0.0)
    a2 = p["dec2_w"] @ r1
    a2 += p["dec2_b"]
    r2 = np.maximum(a2, 0.0)
    out = p["dec3_w"] @ r2
    out += p["dec3_b"]
    return out, (z, a1, r1, a2, r2)


def _forward_backward(model: ShredModel, x, y, ws: _Workspace, t_n: int,
                      use_transform: bool = False):
    """Loss plus gradients for one batch; y is (n_outputs, batch).

    With ``use_transform`` the loss is taken on the affinely mapped output
    (the raw-coefficient loss); otherwise directly on the network output,
    which is the space the trainer optimises in.
    """
    p = model.params
    h = model.hidden_size
    b_n = y.shape[1]
    out, (z, a1, r1, a2, r2) = _forward(model, x, ws, t_n)
    if use_transform:
        resid = model.apply_output_transform(out) - y
        loss = float((resid * resid).sum() / b_n)
        dout = resid
        dout *= 2.0 / b_n
        dout *= model.output_scale
    else:
        resid = out - y
        loss = float((resid * resid).sum() / b_n)
        dout = resid
        dout *= 2.0 / b_n
    grads = {}
    grads["dec3_w"] = dout @ r2.T
    grads["dec3_b"] = dout.sum(axis=1, keepdims=True)
    dr2 = p["dec3_w"].T @ dout
    dr2 *= a2 > 0
    grads["dec2_w"] = dr2 @ r1.T
    grads["dec2_b"] = dr2.sum(axis=1, keepdims=True)
    dr1 = p["dec2_w"].T @ dr2
    dr1 *= a1 > 0
    grads["dec1_w"] = dr1 @ z.T
    grads["dec1_b"] = dr1.sum(axis=1, keepdims=True)
    dz = p["dec1_w"].T @ dr1

    grads["lstm2_w"] = np.empty_like(p["lstm2_w"])
    grads["lstm2_b"] = np.empty_like(p["lstm2_b"])
    grads["lstm1_w"] = np.empty_like(p["lstm1_w"])
    grads["lstm1_b"] = np.empty_like(p["lstm1_b"])
    ws.layer2.dh_top[: t_n - 1] = 0.0
    ws.layer2.dh_top[t_n - 1] = dz
    _layer_backward(p["lstm2_w"], h, h, ws.layer2, t_n,
                    grads["lstm2_w"], grads["lstm2_b"],
                    store_dx=True, dx_store=ws.layer1.dh_top)
    _layer_backward(p["lstm1_w"], model.n_sensors, h, ws.layer1, t_n,
                    grads["lstm1_w"], grads["lstm1_b"], store_dx=False)
    return loss, grads


def _to_feature_major(windows) -> np.ndarray:
    """(n, t, s) sample-major windows -> contiguous (t, s, n)."""
    return np.ascontiguousarray(np.transpose(windows, (1, 2, 0)))


def _check_windows(model: ShredModel, windows) -> np.ndarray:
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None, :, :]
    if windows.ndim != 3 or windows.shape[1] != model.window_length \
            or windows.shape[2] != model.n_sensors:
        raise ShapeError(
            f"windows must be (n, {model.window_length}, {model.n_sensors}), "
            f"got {np.asarray(windows).shape}"
        )
    if not np.isfinite(windows).all():
        raise ShapeError("windows contain non-finite values")
    return windows


def lstm_forward(model: ShredModel, window) -> np.ndarray:
    """Latent vector for one window: the top layer's final hidden state."""
    windows = _check_windows(model, window)
    if windows.shape[0] != 1:
        raise ShapeError("lstm_forward takes a single window")
    x = _to_feature_major(windows)
    ws = _Workspace(model, model.window_length, 1)
    p = model.params
    h = model.hidden_size
    _layer_forward(x, p["lstm1_w"], p["lstm1_b"], model.n_sensors, h,
                   ws.layer1, model.window_length)
    _layer_forward(ws.layer1.h, p["lstm2_w"], p["lstm2_b"], h, h,
                   ws.layer2, model.window_length)
    return ws.layer2.h[model.window_length - 1][:, 0].copy()


def decoder_forward(model: ShredModel, z) -> np.ndarray:
    """Decoder alone: latent vector -> stacked reduced coefficients."""
    z = np.asarray(z, dtype=np.float64).reshape(-1, 1)
    if z.shape[0] != model.hidden_size:
        raise ShapeError(f"latent vector must have length {model.hidden_size}")
    p = model.params
    r1 = np.maximum(p["dec1_w"] @ z + p["dec1_b"], 0.0)
    r2 = np.maximum(p["dec2_w"] @ r1 + p["dec2_b"], 0.0)
    return model.apply_output_transform(p["dec3_w"] @ r2 + p["dec3_b"])[:, 0]


def loss(model: ShredModel, windows, targets) -> float:
    """Mean over the batch of the squared l2 output error."""
    windows = _check_windows(model, windows)
    y = _check_targets(model, windows, targets)
    ws = _Workspace(model, model.window_length, windows.shape[0])
    out, _ = _forward(model, _to_feature_major(windows), ws, model.window_length)
    resid = model.apply_output_transform(out) - y
    return float((resid * resid).sum() / windows.shape[0])


def gradients(model: ShredModel, windows, targets) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of :func:`loss` for every parameter."""
    windows = _check_windows(model, windows)
    y = _check_targets(model, windows, targets)
    ws = _Workspace(model, model.window_length, windows.shape[0])
    _, grads = _forward_backward(model, _to_feature_major(windows), y, ws,
                                 model.window_length, use_transform=True)
    return grads


def _check_targets(model: ShredModel, windows, targets) -> np.ndarray:
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    if y.shape != (windows.shape[0], model.n_outputs):
        raise ShapeError(
            f"targets must be ({windows.shape[0]}, {model.n_outputs}), got {y.shape}"
        )
    return np.ascontiguousarray(y.T)


def predict(model: ShredModel, windows, chunk_size: int = 256) -> np.ndarray:
    """Model output for every window, as an (n_outputs, n_windows) matrix."""
    windows = _check_windows(model, windows)
    n = windows.shape[0]
    x_all = _to_feature_major(windows)
    out = np.empty((model.n_outputs, n))
    workspaces: dict[int, _Workspace] = {}
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        b = stop - start
        if b not in workspaces:
            workspaces[b] = _Workspace(model, model.window_length, b)
        x = np.ascontiguousarray(x_all[:, :, start:stop])
        res, _ = _forward(model, x, workspaces[b], model.window_length)
        out[:, start:stop] = model.apply_output_transform(res)
    return out


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.scratch = {k: np.empty_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        step_size = c.learning_rate / bc1
        inv_bc2 = 1.0 / bc2
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            tmp = self.scratch[k]
            m *= c.beta1
            np.multiply(g, 1.0 - c.beta1, out=tmp)
            m += tmp
            v *= c.beta2
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - c.beta2
            v += tmp
            np.multiply(v, inv_bc2, out=tmp)
            np.sqrt(tmp, out=tmp)
            tmp += c.eps
            np.divide(m, tmp, out=tmp)
            tmp *= step_size
            params[k] -= tmp


TARGET_CONDITIONING = ("none", "standard", "sqrt")


def train(model: ShredModel, windows, targets, train_idx, valid_idx,
          config: TrainConfig | None = None,
          standardize_targets: bool | str = False) -> tuple[ShredModel, TrainHistory]:
    """Fit in place and return the snapshot with the best validation loss.

    ``targets`` is (n_windows, n_outputs); ``train_idx``/``valid_idx`` select
    window indices. Deterministic for a fixed config seed.

    ``standardize_targets`` conditions the many-scales coefficient
    regression: "standard" (or True) trains against per-output standardised
    targets, "sqrt" divides each output by the square root of its spread
    (a compromise that keeps larger coefficients weighted more, but not
    quadratically). Statistics come from the training split; the fitted
    shift/scale live on the model, so predictions always come back in the
    raw coefficient space. History losses are in the conditioned space.
    """
    config = config or TrainConfig()
    mode = standardize_targets
    if mode is True:
        mode = "standard"
    if mode is False:
        mode = "none"
    if mode not in TARGET_CONDITIONING:
        raise ValueError(f"standardize_targets must be one of {TARGET_CONDITIONING}")
    windows = _check_windows(model, windows)
    y_all = np.asarray(targets, dtype=np.float64)
    if y_all.shape != (windows.shape[0], model.n_outputs):
        raise ShapeError(
            f"targets must be ({windows.shape[0]}, {model.n_outputs}), got {y_all.shape}"
        )
    train_idx = np.asarray(train_idx, dtype=np.int64)
    valid_idx = np.asarray(valid_idx, dtype=np.int64)
    if mode != "none":
        stats = y_all[train_idx]
        shift = stats.mean(axis=0)
        scale = stats.std(axis=0)
        scale[scale <= 0.0] = 1.0
        if mode == "sqrt":
            scale = np.sqrt(scale)
        model.output_shift[:, 0] = shift
        model.output_scale[:, 0] = scale
        y_all = (y_all - shift) / scale
    x_all = _to_feature_major(windows)
    t_n = model.window_length

    x_valid = np.ascontiguousarray(x_all[:, :, valid_idx])
    y_valid = np.ascontiguousarray(y_all[valid_idx].T)
    ws_valid = _Workspace(model, t_n, valid_idx.size)

    rng = np.random.default_rng(config.seed)
    workspaces: dict[int, _Workspace] = {}
    optimizer = _Adam(model.params, config)
    history = TrainHistory()
    best_valid = np.inf
    best_params = {k: v.copy() for k, v in model.params.items()}
    since_best = 0

    def valid_loss() -> float:
        out, _ = _forward(model, x_valid, ws_valid, t_n)
        resid = out - y_valid
        return float((resid * resid).sum() / valid_idx.size)

    for epoch in range(config.epochs):
        order = rng.permutation(train_idx)
        sq_sum = 0.0
        for start in range(0, order.size, config.batch_size):
            idx = order[start : start + config.batch_size]
            b = idx.size
            if b not in workspaces:
                workspaces[b] = _Workspace(model, t_n, b)
            xb = np.ascontiguousarray(x_all[:, :, idx])
            yb = np.ascontiguousarray(y_all[idx].T)
            batch_loss, grads = _forward_backward(model, xb, yb, workspaces[b], t_n)
            if not np.isfinite(batch_loss):
                raise DivergenceError(f"training loss became non-finite at epoch {epoch}")
            optimizer.step(model.params, grads)
            sq_sum += batch_loss * b
        epoch_train = sq_sum / order.size
        epoch_valid = valid_loss()
        if not np.isfinite(epoch_valid):
            raise DivergenceError(f"validation loss became non-finite at epoch {epoch}")
        history.train_loss.append(epoch_train)
        history.valid_loss.append(epoch_valid)
        if epoch_valid < best_valid:
            best_valid = epoch_valid
            best_params = {k: v.copy() for k, v in model.params.items()}
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    model.set_params_from(best_params)
    return model, history


class ShredRegressor(BaseEstimator, RegressorMixin):
    """Estimator facade: fit on (windows, targets), predict sample-major.

    ``X`` is (n_windows, lags+1, n_sensors) and ``y`` is
    (n_windows, n_outputs); ``fit`` accepts explicit train/validation index
    arrays, defaulting to a seeded 85/15 shuffle.
    """

    def __init__(self, lags: int = 30, hidden_size: int = 64,
                 decoder_sizes: tuple[int, int] = (350, 400),
                 learning_rate: float = 1e-3, epochs: int = 1000,
                 batch_size: int = 64, patience: int = 50, seed: int = 0):
        self.lags = lags
        self.hidden_size = hidden_size
        self.decoder_sizes = decoder_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.seed = seed
        self.model_: ShredModel | None = None
        self.history_: TrainHistory | None = None

    def fit(self, X, y, train_idx=None, valid_idx=None) -> "ShredRegressor":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if train_idx is None or valid_idx is None:
            rng = np.random.default_rng(self.seed)
            perm = rng.permutation(X.shape[0])
            n_valid = max(1, int(round(0.15 * X.shape[0])))
            valid_idx = np.sort(perm[:n_valid])
            train_idx = np.sort(perm[n_valid:])
        model = ShredModel(
            n_sensors=X.shape[2], n_outputs=y.shape[1], lags=self.lags,
            hidden_size=self.hidden_size, decoder_sizes=self.decoder_sizes,
            seed=self.seed,
        )
        cfg = TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs,
            batch_size=self.batch_size, patience=self.patience, seed=self.seed,
        )
        self.model_, self.history_ = train(model, X, y, train_idx, valid_idx, cfg)
        return self

    def predict(self, X) -> np.ndarray:
        check_fitted(self, "model_")
        return predict(self.model_, X).T
