"""Conditional-expectation regression.

A fully connected network trained on mean squared error with L2 weight decay
and early stopping.  Any regressor exposing ``predict`` can stand in for it in
the pipeline; this one exists so the whole method runs on numpy alone.

The training loss is::

    L = mean_{i,j} (f(x_i)_j - y_ij)^2 + weight_decay / 2 * sum ||W_l||_F^2

where the mean runs over samples and output dimensions and biases are not
decayed.  Inputs are standardized with training-split statistics; outputs are
fit in their original units.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DivergenceError

MODEL_MAGIC = b"CFLREG"
MODEL_VERSION = 1


def _tanh(z):
    return np.tanh(z)


def _tanh_grad(a):
    return 1.0 - a * a


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(a):
    return (a > 0).astype(a.dtype)


def _identity(z):
    return z


def _identity_grad(a):
    return np.ones_like(a)


# derivatives are expressed in terms of the activation output
ACTIVATIONS = {
    "tanh": (_tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
    "identity": (_identity, _identity_grad),
}


@dataclass(frozen=True)
class RegressorConfig:
    """Training hyper-parameters.

    None of these values are reproductions of a published setting: 128-128-128
    tanh layers, Adam at 1e-3, weight decay 1e-4 and patience 20 are defaults
    that train reliably on the bundled synthetic data.
    """

    hidden_layer_sizes: tuple[int, ...] = (128, 128, 128)
    activation: str = "tanh"
    weight_decay: float = 1e-4
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 20
    validation_fraction: float = 0.1
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layer_sizes", tuple(int(h) for h in self.hidden_layer_sizes))
        if any(h < 1 for h in self.hidden_layer_sizes):
            raise ConfigError("hidden layer sizes must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("learning_rate, batch_size, max_epochs and patience must be positive")


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    best_epoch: int = -1


@dataclass
class Regressor:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    history: TrainingHistory = field(default_factory=TrainingHistory)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def zeros(cls, sizes, activation: str = "tanh", output_bias=None) -> "Regressor":
        """Network with all weights zero; its output is the last bias vector."""
        sizes = list(sizes)
        weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(b) for b in sizes[1:]]
        if output_bias is not None:
            biases[-1] = np.asarray(output_bias, dtype=np.float64).copy()
        return cls(weights, biases, activation)

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        if self.x_mean is None:
            return x
        return (x - self.x_mean) / self.x_scale

    def predict(self, x) -> np.ndarray:
        """Map a single input vector (1-D) or a batch (2-D, one row per sample)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        if xb.ndim != 2 or xb.shape[1] != self.input_dim:
            raise DataError(f"expected inputs of dimension {self.input_dim}, got shape {x.shape}")
        if not np.all(np.isfinite(xb)):
            raise DataError("inputs must be finite")
        out = _forward(self.weights, self.biases, self.activation, self._standardize(xb))[-1]
        return out[0] if single else out

    __call__ = predict

    def save(self, path) -> Path:
        """Write a version-tagged model file: magic, header length, JSON header, float64 payload."""
        path = Path(path)
        header = {
            "version": MODEL_VERSION,
            "activation": self.activation,
            "layers": [list(w.shape) for w in self.weights],
            "standardized": self.x_mean is not None,
            "best_epoch": self.history.best_epoch,
        }
        arrays = [a for pair in zip(self.weights, self.biases) for a in pair]
        if self.x_mean is not None:
            arrays += [self.x_mean, self.x_scale]
        hbytes = json.dumps(header, sort_keys=True).encode()
        buf = io.BytesIO()
        buf.write(MODEL_MAGIC)
        buf.write(struct.pack("<I", len(hbytes)))
        buf.write(hbytes)
        for a in arrays:
            buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        path.write_bytes(buf.getvalue())
        return path

    @classmethod
    def load(cls, path) -> "Regressor":
        raw = Path(path).read_bytes()
        if not raw.startswith(MODEL_MAGIC):
            raise DataError(f"{path}: not a regressor file")
        off = len(MODEL_MAGIC)
        (hlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        header = json.loads(raw[off: off + hlen])
        off += hlen
        if header.get("version") != MODEL_VERSION:
            raise DataError(f"{path}: unsupported model version {header.get('version')}")
        payload = np.frombuffer(raw, dtype="<f8", offset=off)
        pos = 0

        def take(shape):
            nonlocal pos
            n = int(np.prod(shape))
            arr = payload[pos: pos + n].reshape(shape).astype(np.float64)
            pos += n
            return arr

        weights, biases = [], []
        for a, b in header["layers"]:
            weights.append(take((a, b)))
            biases.append(take((b,)))
        x_mean = x_scale = None
        if header["standardized"]:
            x_mean = take((weights[0].shape[0],))
            x_scale = take((weights[0].shape[0],))
        if pos != payload.size:
            raise DataError(f"{path}: payload size does not match header")
        return cls(weights, biases, header["activation"], x_mean, x_scale,
                   TrainingHistory(best_epoch=header["best_epoch"]))


def _forward(weights, biases, activation, x):
    act, _ = ACTIVATIONS[activation]
    outs = [x]
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        h = z if i == last else act(z)
        outs.append(h)
    return outs


def loss_and_gradient(weights, biases, activation, x, y, weight_decay):
    """MSE + decay loss and its gradient with respect to every weight and bias."""
    _, dact = ACTIVATIONS[activation]
    outs = _forward(weights, biases, activation, x)
    resid = outs[-1] - y
    mse = float(np.mean(resid * resid))
    loss = mse + 0.5 * weight_decay * sum(float(np.sum(w * w)) for w in weights)
    delta = 2.0 * resid / resid.size
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gw[i] = outs[i].T @ delta + weight_decay * weights[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * dact(outs[i])
    return loss, mse, gw, gb


def _init_params(sizes, rng):
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-lim, lim, size=(a, b)))
        biases.append(np.zeros(b))
    return weights, biases


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def split_train_validation(n: int, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def fit_regressor(data, cfg: RegressorConfig | None = None) -> Regressor:
    """Fit ``f`` minimizing squared error of ``Y`` on ``X`` with early stopping.

    ``data`` is a :class:`~cflenso.grid.PairedDataset` (or any object with
    ``X``/``Y`` arrays).  The returned network holds the parameters of the epoch
    with the lowest validation MSE.  Training is fully determined by
    ``cfg.seed`` (initialization, split and mini-batch order).
    """
    cfg = cfg or RegressorConfig()
    X = np.asarray(data.X, dtype=np.float64)
    Y = np.asarray(data.Y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    n = X.shape[0]
    if n < 2 or Y.shape[0] != n:
        raise DataError(f"need at least 2 aligned samples, got X={X.shape}, Y={Y.shape}")

    rng = np.random.default_rng(cfg.seed)
    tr, va = split_train_validation(n, cfg.validation_fraction, rng)
    x_mean = X[tr].mean(axis=0)
    x_scale = X[tr].std(axis=0)
    x_scale[x_scale < 1e-12] = 1.0
    Xs = (X - x_mean) / x_scale
    xt, yt, xv, yv = Xs[tr], Y[tr], Xs[va], Y[va]

    sizes = [X.shape[1], *cfg.hidden_layer_sizes, Y.shape[1]]
    weights, biases = _init_params(sizes, rng)
    # start from the constant predictor: zero output weights, bias at the target mean
    weights[-1][:] = 0.0
    biases[-1][:] = yt.mean(axis=0)
    params = [p for pair in zip(weights, biases) for p in pair]
    opt = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(params, cfg.learning_rate)

    history = TrainingHistory()
    best = ([w.copy() for w in weights], [b.copy() for b in biases])
    best_val = np.inf
    since_best = 0
    bs = min(cfg.batch_size, tr.size)
    # overflow is detected below and reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.max_epochs):
            order = rng.permutation(tr.size)
            total, count = 0.0, 0
            for start in range(0, tr.size, bs):
                idx = order[start: start + bs]
                loss, _, gw, gb = loss_and_gradient(weights, biases, cfg.activation, xt[idx], yt[idx],
                                                    cfg.weight_decay)
                if not np.isfinite(loss):
                    raise DivergenceError(epoch, loss)
                total += loss * idx.size
                count += idx.size
                opt.step(params, [g for pair in zip(gw, gb) for g in pair])
            val = float(np.mean((_forward(weights, biases, cfg.activation, xv)[-1] - yv) ** 2))
            if not np.isfinite(val):
                raise DivergenceError(epoch, val)
            history.train_loss.append(total / count)
            history.val_mse.append(val)
            if val < best_val:
                best_val = val
                best = ([w.copy() for w in weights], [b.copy() for b in biases])
                history.best_epoch = epoch
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break

    return Regressor(best[0], best[1], cfg.activation, x_mean, x_scale, history)


def predict(reg: Regressor, x) -> np.ndarray:
    return reg.predict(x)


def finite_difference_gradient(weights, biases, activation, x, y, weight_decay, step=1e-5):
    """Central differences of the training loss, one parameter at a time."""
    params = [p for pair in zip(weights, biases) for p in pair]
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + step
            lp = loss_and_gradient(weights, biases, activation, x, y, weight_decay)[0]
            flat[k] = old - step
            lm = loss_and_gradient(weights, biases, activation, x, y, weight_decay)[0]
            flat[k] = old
            gflat[k] = (lp - lm) / (2.0 * step)
        grads.append(g)
    return grads


def gradient_errors(cfg: RegressorConfig, x, y, zero_init: bool = False, step: float = 1e-5):
    """Return ``(max_relative_error, max_absolute_error)`` of backprop vs finite differences.

    Parameters are drawn from ``cfg.seed`` (biases included, so every path is
    exercised) unless ``zero_init`` is set.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None] if x.shape[0] == y.size else y[None, :]
    sizes = [x.shape[1], *cfg.hidden_layer_sizes, y.shape[1]]
    rng = np.random.default_rng(cfg.seed)
    weights, biases = _init_params(sizes, rng)
    if zero_init:
        for w in weights:
            w[:] = 0.0
    else:
        biases = [rng.normal(scale=0.5, size=b.shape) for b in biases]
    _, _, gw, gb = loss_and_gradient(weights, biases, cfg.activation, x, y, cfg.weight_decay)
    analytic = [g for pair in zip(gw, gb) for g in pair]
    numeric = finite_difference_gradient(weights, biases, cfg.activation, x, y, cfg.weight_decay, step)
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric])
    abs_err = np.abs(a - n)
    rel = abs_err / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(rel.max()), float(abs_err.max())


def gradient_check(cfg: RegressorConfig, x, y, zero_init: bool = False) -> float:
    """Maximum relative error between backprop and central differences (step 1e-5)."""
    return gradient_errors(cfg, x, y, zero_init=zero_init)[0]


def config_dict(cfg: RegressorConfig) -> dict:
    d = asdict(cfg)
    d["hidden_layer_sizes"] = list(cfg.hidden_layer_sizes)
    return d
