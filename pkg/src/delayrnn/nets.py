"""Feedforward delay-map network and recursion-structured RNN.

Both models are single-hidden-layer tanh networks trained on the summed squared
error with full-batch RMSprop and early stopping on a validation set.

RNN, for a delay vector (x_{t-1}, ..., x_{t-d}) and a fixed initial hidden
state g_{t-d}::

    g_{k+1} = tanh(W_g [x_k ; g_k] + b_g)      k = t-d, ..., t-2
    f_t     = tanh(W_f [x_{t-1} ; g_{t-1}] + b_f)
    x_hat_t = W_x f_t + b_x

Parameters live in a flat float64 vector during training so the whole loop
(forward, backward, RMSprop, early stopping) runs inside numba.  Flat layouts:

    FNN: W_f (h, d*n) | b_f (h) | W_x (n, h) | b_x (n)
    RNN: W_x (n, h) | b_x (n) | W_f (h, n+h) | b_f (h) | W_g (h, n+h) | b_g (h) | g_init (h)
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from numba import njit

from .embedding import DelayDataset, NormalizationStats, as_series
from .errors import DivergedTrainingError, SequenceLengthError, ShapeMismatchError

__all__ = [
    "Arch",
    "GInitPolicy",
    "FnnParams",
    "RnnParams",
    "TrainConfig",
    "TrainHistory",
    "Model",
    "init_fnn",
    "init_rnn",
    "fnn_forward",
    "rnn_forward",
    "loss",
    "gradients",
    "rmsprop_step",
    "stopping_point",
    "train",
    "predict",
    "iterated_forecast",
    "save_params",
    "load_params",
]

FNN, RNN = 0, 1


class Arch(str, enum.Enum):
    FNN = "fnn"
    RNN = "rnn"

    @property
    def code(self) -> int:
        return FNN if self is Arch.FNN else RNN


class GInitPolicy(str, enum.Enum):
    RANDOM_NORMAL = "random_normal"
    ZERO = "zero"
    TRAINABLE = "trainable"


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class FnnParams:
    W_f: np.ndarray
    b_f: np.ndarray
    W_x: np.ndarray
    b_x: np.ndarray

    @property
    def h(self) -> int:
        return self.W_f.shape[0]

    @property
    def n(self) -> int:
        return self.W_x.shape[0]

    @property
    def d(self) -> int:
        return self.W_f.shape[1] // self.n

    @property
    def n_params(self) -> int:
        return sum(getattr(self, f.name).size for f in fields(self))

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.W_f.ravel(), self.b_f, self.W_x.ravel(), self.b_x])

    @classmethod
    def from_flat(cls, theta: np.ndarray, h: int, n: int, d: int) -> "FnnParams":
        D = d * n
        sizes = [h * D, h, n * h, n]
        W_f, b_f, W_x, b_x = np.split(np.asarray(theta, dtype=np.float64).copy(), np.cumsum(sizes)[:-1])
        return cls(W_f.reshape(h, D), b_f, W_x.reshape(n, h), b_x)


@dataclass
class RnnParams:
    W_x: np.ndarray
    b_x: np.ndarray
    W_f: np.ndarray
    b_f: np.ndarray
    W_g: np.ndarray
    b_g: np.ndarray
    g_init: np.ndarray = None

    def __post_init__(self):
        if self.g_init is None:
            self.g_init = np.zeros(self.W_g.shape[0])

    @property
    def h(self) -> int:
        return self.W_f.shape[0]

    @property
    def n(self) -> int:
        return self.W_x.shape[0]

    @property
    def n_params(self) -> int:
        """Weight and bias count; the initial hidden state is not counted."""
        return sum(getattr(self, f.name).size for f in fields(self) if f.name != "g_init")

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.W_x.ravel(), self.b_x, self.W_f.ravel(), self.b_f,
                               self.W_g.ravel(), self.b_g, self.g_init])

    @classmethod
    def from_flat(cls, theta: np.ndarray, h: int, n: int, d: int | None = None) -> "RnnParams":
        sizes = [n * h, n, h * (n + h), h, h * (n + h), h, h]
        W_x, b_x, W_f, b_f, W_g, b_g, g0 = np.split(np.asarray(theta, dtype=np.float64).copy(),
                                                     np.cumsum(sizes)[:-1])
        return cls(W_x.reshape(n, h), b_x, W_f.reshape(h, n + h), b_f, W_g.reshape(h, n + h), b_g, g0)


def init_fnn(h: int, d: int, n: int, rng: np.random.Generator) -> FnnParams:
    D = d * n
    return FnnParams(
        W_f=rng.standard_normal((h, D)) / math.sqrt(D),
        b_f=np.zeros(h),
        W_x=rng.standard_normal((n, h)) / math.sqrt(h),
        b_x=np.zeros(n),
    )


def init_rnn(h: int, n: int, rng: np.random.Generator, g_init_policy=GInitPolicy.RANDOM_NORMAL,
             g_init_std: float = 0.1) -> RnnParams:
    policy = GInitPolicy(g_init_policy)
    W_x = rng.standard_normal((n, h)) / math.sqrt(h)
    W_f = rng.standard_normal((h, n + h)) / math.sqrt(n + h)
    W_g = rng.standard_normal((h, n + h)) / math.sqrt(n + h)
    if policy is GInitPolicy.ZERO:
        g0 = np.zeros(h)
    else:
        g0 = g_init_std * rng.standard_normal(h)
    return RnnParams(W_x, np.zeros(n), W_f, np.zeros(h), W_g, np.zeros(h), g0)


def save_params(params, path=None, **meta) -> str:
    """JSON checkpoint: row-major nested lists keyed by parameter name."""
    arch = "fnn" if isinstance(params, FnnParams) else "rnn"
    payload = {"arch": arch, "meta": meta,
               "params": {f.name: getattr(params, f.name).tolist() for f in fields(params)}}
    text = json.dumps(payload, indent=1)
    if path is not None:
        Path(path).write_text(text)
    return text


def load_params(path_or_text):
    text = str(path_or_text)
    if not text.lstrip().startswith("{"):
        text = Path(text).read_text()
    payload = json.loads(text)
    cls = FnnParams if payload["arch"] == "fnn" else RnnParams
    return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in payload["params"].items()})


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _fnn_loss_grad(theta, X, Y, h, grad, need_grad):
    S, D = X.shape
    n = Y.shape[1]
    o_bf = h * D
    o_Wx = o_bf + h
    o_bx = o_Wx + n * h
    if need_grad:
        grad[:] = 0.0
    hid = np.empty(h)
    dp = np.empty(n)
    total = 0.0
    for s in range(S):
        for i in range(h):
            a = theta[o_bf + i]
            row = i * D
            for j in range(D):
                a += theta[row + j] * X[s, j]
            hid[i] = math.tanh(a)
        for k in range(n):
            p = theta[o_bx + k]
            for i in range(h):
                p += theta[o_Wx + k * h + i] * hid[i]
            e = p - Y[s, k]
            total += e * e
            dp[k] = 2.0 * e
        if need_grad:
            for k in range(n):
                grad[o_bx + k] += dp[k]
                for i in range(h):
                    grad[o_Wx + k * h + i] += dp[k] * hid[i]
            for i in range(h):
                dh = 0.0
                for k in range(n):
                    dh += dp[k] * theta[o_Wx + k * h + i]
                da = dh * (1.0 - hid[i] * hid[i])
                grad[o_bf + i] += da
                row = i * D
                for j in range(D):
                    grad[row + j] += da * X[s, j]
    return total


@njit(cache=True)
def _rnn_loss_grad(theta, X, Y, h, grad, need_grad):
    S = X.shape[0]
    n = Y.shape[1]
    d = X.shape[1] // n
    U = n + h
    o_bx = n * h
    o_Wf = o_bx + n
    o_bf = o_Wf + h * U
    o_Wg = o_bf + h
    o_bg = o_Wg + h * U
    o_g0 = o_bg + h
    if need_grad:
        grad[:] = 0.0
    G = np.empty((d, h))
    f = np.empty(h)
    dp = np.empty(n)
    dg = np.empty(h)
    dg_new = np.empty(h)
    da = np.empty(h)
    total = 0.0
    for s in range(S):
        for l in range(h):
            G[0, l] = theta[o_g0 + l]
        # step j consumes x_{t-d+j}, stored at block d-1-j of the delay vector
        for j in range(d - 1):
            xb = (d - 1 - j) * n
            for i in range(h):
                a = theta[o_bg + i]
                row = o_Wg + i * U
                for k in range(n):
                    a += theta[row + k] * X[s, xb + k]
                for l in range(h):
                    a += theta[row + n + l] * G[j, l]
                G[j + 1, i] = math.tanh(a)
        for i in range(h):
            a = theta[o_bf + i]
            row = o_Wf + i * U
            for k in range(n):
                a += theta[row + k] * X[s, k]
            for l in range(h):
                a += theta[row + n + l] * G[d - 1, l]
            f[i] = math.tanh(a)
        for k in range(n):
            p = theta[o_bx + k]
            for i in range(h):
                p += theta[k * h + i] * f[i]
            e = p - Y[s, k]
            total += e * e
            dp[k] = 2.0 * e
        if not need_grad:
            continue
        for k in range(n):
            grad[o_bx + k] += dp[k]
            for i in range(h):
                grad[k * h + i] += dp[k] * f[i]
        for i in range(h):
            df = 0.0
            for k in range(n):
                df += dp[k] * theta[k * h + i]
            da[i] = df * (1.0 - f[i] * f[i])
            grad[o_bf + i] += da[i]
            row = o_Wf + i * U
            for k in range(n):
                grad[row + k] += da[i] * X[s, k]
            for l in range(h):
                grad[row + n + l] += da[i] * G[d - 1, l]
        for l in range(h):
            acc = 0.0
            for i in range(h):
                acc += da[i] * theta[o_Wf + i * U + n + l]
            dg[l] = acc
        for j in range(d - 2, -1, -1):
            xb = (d - 1 - j) * n
            for i in range(h):
                da[i] = dg[i] * (1.0 - G[j + 1, i] * G[j + 1, i])
                grad[o_bg + i] += da[i]
                row = o_Wg + i * U
                for k in range(n):
                    grad[row + k] += da[i] * X[s, xb + k]
                for l in range(h):
                    grad[row + n + l] += da[i] * G[j, l]
            for l in range(h):
                acc = 0.0
                for i in range(h):
                    acc += da[i] * theta[o_Wg + i * U + n + l]
                dg_new[l] = acc
            for l in range(h):
                dg[l] = dg_new[l]
        for l in range(h):
            grad[o_g0 + l] += dg[l]
    return total


@njit(cache=True)
def _rnn_predict(theta, X, n, h):
    S = X.shape[0]
    d = X.shape[1] // n
    U = n + h
    o_bx = n * h
    o_Wf = o_bx + n
    o_bf = o_Wf + h * U
    o_Wg = o_bf + h
    o_bg = o_Wg + h * U
    o_g0 = o_bg + h
    out = np.empty((S, n))
    g = np.empty(h)
    g_next = np.empty(h)
    f = np.empty(h)
    for s in range(S):
        for l in range(h):
            g[l] = theta[o_g0 + l]
        for j in range(d - 1):
            xb = (d - 1 - j) * n
            for i in range(h):
                a = theta[o_bg + i]
                row = o_Wg + i * U
                for k in range(n):
                    a += theta[row + k] * X[s, xb + k]
                for l in range(h):
                    a += theta[row + n + l] * g[l]
                g_next[i] = math.tanh(a)
            g[:] = g_next
        for i in range(h):
            a = theta[o_bf + i]
            row = o_Wf + i * U
            for k in range(n):
                a += theta[row + k] * X[s, k]
            for l in range(h):
                a += theta[row + n + l] * g[l]
            f[i] = math.tanh(a)
        for k in range(n):
            p = theta[o_bx + k]
            for i in range(h):
                p += theta[k * h + i] * f[i]
            out[s, k] = p
    return out


@njit(cache=True)
def _loss_grad(arch, theta, X, Y, h, grad, need_grad):
    if arch == 0:
        return _fnn_loss_grad(theta, X, Y, h, grad, need_grad)
    return _rnn_loss_grad(theta, X, Y, h, grad, need_grad)


@njit(cache=True)
def _rmsprop(theta, grad, ms, lr, rho, eps):
    for i in range(theta.shape[0]):
        ms[i] = rho * ms[i] + (1.0 - rho) * grad[i] * grad[i]
        theta[i] -= lr * grad[i] / (math.sqrt(ms[i]) + eps)


@njit(cache=True)
def _early_stop_update(value, epoch, best_value, best_epoch, patience):
    """Returns (best_value, best_epoch, stop) after observing ``value`` at ``epoch``."""
    if value < best_value:
        best_value = value
        best_epoch = epoch
    return best_value, best_epoch, epoch - best_epoch >= patience


@njit(cache=True)
def _train_loop(arch, theta0, mask, Xtr, Ytr, Xva, Yva, h, lr, rho, eps, max_epochs, patience, has_val):
    theta = theta0.copy()
    grad = np.zeros_like(theta)
    scratch = np.zeros_like(theta)
    ms = np.zeros_like(theta)
    best_theta = theta.copy()
    best_value = np.inf
    best_epoch = 0
    train_hist = np.empty(max_epochs)
    val_hist = np.empty(max_epochs)
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        tr = _loss_grad(arch, theta, Xtr, Ytr, h, grad, True)
        if has_val:
            va = _loss_grad(arch, theta, Xva, Yva, h, scratch, False)
        else:
            va = tr
        train_hist[epoch - 1] = tr
        val_hist[epoch - 1] = va
        if not (np.isfinite(tr) and np.isfinite(va)):
            return best_theta, train_hist[:epoch], val_hist[:epoch], best_epoch, False
        best_value, best_epoch, stop = _early_stop_update(va, epoch, best_value, best_epoch, patience)
        if best_epoch == epoch:
            best_theta[:] = theta
        if stop:
            break
        for i in range(grad.shape[0]):
            grad[i] *= mask[i]
        _rmsprop(theta, grad, ms, lr, rho, eps)
    return best_theta, train_hist[:epoch], val_hist[:epoch], best_epoch, True


# ---------------------------------------------------------------------------
# forward passes


def _arch_of(params) -> int:
    return FNN if isinstance(params, FnnParams) else RNN


def _as_batch(v, width: int) -> tuple[np.ndarray, bool]:
    a = np.asarray(v, dtype=np.float64)
    single = a.ndim == 1
    a = np.ascontiguousarray(a.reshape(1, -1) if single else a)
    if a.shape[1] != width:
        raise ShapeMismatchError(f"expected delay vectors of width {width}, got {a.shape[1]}")
    return a, single


def fnn_forward(params: FnnParams, delay_vector) -> np.ndarray:
    """W_x tanh(W_f v + b_f) + b_x for one delay vector or a (S, d*n) batch."""
    X, single = _as_batch(delay_vector, params.W_f.shape[1])
    out = np.tanh(X @ params.W_f.T + params.b_f) @ params.W_x.T + params.b_x
    return out[0] if single else out


def rnn_forward(params: RnnParams, delay_vector, g_init=None):
    """Run the recursion over one delay vector ordered (x_{t-1}, ..., x_{t-d}).

    Returns the prediction and the hidden states [g_{t-d}, ..., g_{t-1}];
    ``g_init`` defaults to the state stored in ``params``.
    """
    n = params.n
    v = np.asarray(delay_vector, dtype=np.float64).ravel()
    if v.size == 0 or v.size % n:
        raise SequenceLengthError(f"delay vector length {v.size} is not a positive multiple of n={n}")
    d = v.size // n
    blocks = v.reshape(d, n)  # row 0 = x_{t-1}
    g = params.g_init if g_init is None else np.asarray(g_init, dtype=np.float64)
    if g.shape != (params.h,):
        raise SequenceLengthError(f"g_init must have shape ({params.h},)")
    hidden = [g]
    for k in range(d - 1, 0, -1):
        g = np.tanh(params.W_g @ np.concatenate([blocks[k], g]) + params.b_g)
        hidden.append(g)
    f = np.tanh(params.W_f @ np.concatenate([blocks[0], g]) + params.b_f)
    return params.W_x @ f + params.b_x, hidden


def loss(predictions, targets) -> float:
    """Sum of squared errors over samples and components."""
    p = as_series(predictions)
    t = as_series(targets)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"predictions {p.shape} vs targets {t.shape}")
    return float(np.sum((p - t) ** 2))


def gradients(params, inputs, targets):
    """Exact gradient of ``loss`` w.r.t. every parameter (BPTT for the RNN).

    Returns ``(loss_value, grads)`` with ``grads`` a parameter container of the
    same type.  For the RNN the ``g_init`` entry holds the gradient with respect
    to the initial hidden state.
    """
    Y = np.ascontiguousarray(as_series(targets))
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(inputs, dtype=np.float64)))
    if X.shape[0] != Y.shape[0] or X.shape[1] % params.n:
        raise ShapeMismatchError("inputs and targets do not line up")
    if isinstance(params, FnnParams) and X.shape[1] != params.W_f.shape[1]:
        raise ShapeMismatchError("delay vector width does not match W_f")
    theta = params.flatten()
    grad = np.zeros_like(theta)
    value = _loss_grad(_arch_of(params), theta, X, Y, params.h, grad, True)
    if isinstance(params, FnnParams):
        return value, FnnParams.from_flat(grad, params.h, params.n, params.d)
    return value, RnnParams.from_flat(grad, params.h, params.n)


# ---------------------------------------------------------------------------
# optimizer and training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-8
    max_epochs: int = 20000
    patience: int = 200
    seed: int = 0
    g_init_policy: GInitPolicy = GInitPolicy.RANDOM_NORMAL
    g_init_std: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "g_init_policy", GInitPolicy(self.g_init_policy))
        if not 0 < self.rms_decay < 1:
            raise ValueError("rms_decay must lie in (0, 1)")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")
        if self.learning_rate <= 0 or self.rms_epsilon < 0:
            raise ValueError("learning_rate must be positive and rms_epsilon non-negative")


def rmsprop_step(params, grads, state, config: TrainConfig):
    """One RMSprop update; ``state`` holds running mean squares (or None to start).

    Returns new ``(params, state)``; inputs are left untouched.
    """
    theta = params.flatten()
    g = grads.flatten()
    ms = np.zeros_like(theta) if state is None else state.flatten().copy()
    _rmsprop(theta, g, ms, config.learning_rate, config.rms_decay, config.rms_epsilon)
    shape = (params.h, params.n, getattr(params, "d", None))
    cls = type(params)
    return cls.from_flat(theta, *shape), cls.from_flat(ms, *shape)


def stopping_point(val_losses, patience: int) -> tuple[int, int]:
    """Replay the early-stopping rule on a loss history.

    Returns ``(stop_epoch, best_epoch)``, epochs counted from 1; ``stop_epoch``
    is the length of the history if the rule never fires.
    """
    best_value, best_epoch = np.inf, 0
    for epoch, v in enumerate(val_losses, start=1):
        best_value, best_epoch, stop = _early_stop_update(float(v), epoch, best_value, best_epoch, patience)
        if stop:
            return epoch, best_epoch
    return len(val_losses), best_epoch


@dataclass
class TrainHistory:
    train_loss: np.ndarray
    val_loss: np.ndarray
    best_epoch: int

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_loss(self) -> float:
        return float(self.val_loss[self.best_epoch - 1])


@dataclass
class Model:
    """Trained network plus the normalization it was fitted under."""

    arch: Arch
    params: FnnParams | RnnParams
    norm: NormalizationStats
    d: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.arch = Arch(self.arch)

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def h(self) -> int:
        return self.params.h


def train(arch, h: int, train_set: DelayDataset, val_set: DelayDataset | None, config: TrainConfig = TrainConfig(),
          init=None) -> tuple[Model, TrainHistory]:
    """Full-batch RMSprop with early stopping; restores the best-validation weights.

    Inputs and targets are standardized with ``train_set.norm``.  An empty or
    missing ``val_set`` monitors the training loss instead.
    """
    arch = Arch(arch)
    if train_set.empty:
        raise ValueError("training set is empty")
    norm, d, n = train_set.norm, train_set.d, train_set.n
    rng = np.random.default_rng(config.seed)
    if init is None:
        init = init_fnn(h, d, n, rng) if arch is Arch.FNN else init_rnn(
            h, n, rng, config.g_init_policy, config.g_init_std)
    theta0 = init.flatten()
    mask = np.ones_like(theta0)
    if arch is Arch.RNN and config.g_init_policy is not GInitPolicy.TRAINABLE:
        mask[-h:] = 0.0
    Xtr = np.ascontiguousarray(norm.standardize(train_set.inputs))
    Ytr = np.ascontiguousarray(norm.standardize(train_set.targets))
    has_val = val_set is not None and not val_set.empty
    if has_val:
        Xva = np.ascontiguousarray(norm.standardize(val_set.inputs))
        Yva = np.ascontiguousarray(norm.standardize(val_set.targets))
    else:
        Xva, Yva = Xtr[:0], Ytr[:0]
    theta, tl, vl, best_epoch, ok = _train_loop(
        arch.code, theta0, mask, Xtr, Ytr, Xva, Yva, int(h), config.learning_rate, config.rms_decay,
        config.rms_epsilon, int(config.max_epochs), int(config.patience), has_val)
    if not ok:
        raise DivergedTrainingError(f"{arch.value} training loss became non-finite at epoch {len(tl)}")
    cls = FnnParams if arch is Arch.FNN else RnnParams
    params = cls.from_flat(theta, h, n, d)
    history = TrainHistory(tl.copy(), vl.copy(), int(best_epoch))
    return Model(arch, params, norm, d, {"seed": config.seed}), history


def _model_forward_std(model: Model, Xs: np.ndarray) -> np.ndarray:
    """Forward pass on standardized inputs, standardized outputs."""
    Xs = np.ascontiguousarray(Xs)
    if model.arch is Arch.FNN:
        return fnn_forward(model.params, Xs)
    return _rnn_predict(model.params.flatten(), Xs, model.n, model.h)


def predict(model: Model, inputs) -> np.ndarray:
    """One-step predictions (raw units) for raw delay vectors."""
    X, single = _as_batch(inputs, model.d * model.n)
    out = model.norm.destandardize(_model_forward_std(model, model.norm.standardize(X)))
    return out[0] if single else out


def iterated_forecast(model: Model, windows, k: int) -> np.ndarray:
    """Feed predictions back as the newest lag for ``k`` steps.

    ``windows`` is one delay vector (most recent first) or a batch of them.
    Returns (k, n) for a single window or (B, k, n) for a batch.  The RNN
    restarts from its stored initial hidden state at every step and re-runs
    the whole window, matching how it was trained.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    X, single = _as_batch(windows, model.d * model.n)
    n = model.n
    Xs = model.norm.standardize(X)
    out = np.empty((X.shape[0], k, n))
    for step in range(k):
        p = _model_forward_std(model, Xs)
        out[:, step] = model.norm.destandardize(p)
        Xs = np.concatenate([p, Xs[:, : Xs.shape[1] - n]], axis=1)
    return out[0] if single else out
