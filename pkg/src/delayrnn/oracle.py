"""Model-free benchmarks: recursion error and its first-order covariance.

The unobserved part of the state d samples back is estimated by a k-nearest
neighbour regression on the delay vector of observations.  Plugging that
estimate into the true dynamics, and overwriting the observed block with the
recorded data after every step, gives the best one-step forecast available to
any delay-map model at depth d; the residual against the data is the recursion
error.  Its covariance is approximated by pushing the conditional covariance of
the unobserved state through the Jacobian blocks of the flow map.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .dynamics import SystemKind, SystemSpec, Trajectory, flow_jacobian_batch, flow_map_batch, simulate
from .embedding import delay_windows
from .errors import InsufficientDataError, SingularDelayMapError

__all__ = [
    "Target",
    "ConditionalRegressor",
    "RecursionErrorReport",
    "fit_conditional",
    "recursion_residuals",
    "recursion_error",
    "propagate_covariance",
    "first_order_sigma",
    "lv_exact_delay_map",
    "oracle_report",
    "Method",
]

K_GRID = (12, 20, 30, 50)
RIDGE = 1e-6


class Target(str, enum.Enum):
    Y_MEAN = "y_mean"
    Y_COVARIANCE = "y_cov"


class Method(str, enum.Enum):
    LOCAL_LINEAR = "local_linear"
    IDW = "idw"


def _windows_and_lagged(traj: Trajectory, d: int):
    """Delay vectors (x_{t-1}..x_{t-d}) and the unobserved state y_{t-d}.

    Indexed by the most recent lag position i = t-1, for i in [d-1, T-1).
    """
    x = traj.observed
    y = traj.unobserved
    stops = np.arange(d - 1, len(traj))
    return delay_windows(x, d, stops), y[stops - d + 1], stops


@dataclass
class ConditionalRegressor:
    """k-nearest-neighbour regression in standardized delay coordinates.

    ``local_linear`` fits a tricube-weighted linear model on the k neighbours
    (small ridge) and returns its intercept; ``idw`` averages the neighbours'
    responses with inverse-distance weights.  The covariance target always uses
    ``idw`` so that its output stays positive semidefinite.
    """

    inputs: np.ndarray
    responses: np.ndarray
    k: int
    center: np.ndarray
    scale: np.ndarray
    d: int
    target: Target = Target.Y_MEAN
    m: int = 1
    method: Method = Method.LOCAL_LINEAR
    ridge: float = RIDGE

    def __post_init__(self):
        if not 1 <= self.k <= len(self.inputs):
            raise ValueError("k must lie in [1, number of reference points]")
        self.method = Method(self.method)
        self._Xs = (self.inputs - self.center) / self.scale
        self._tree = cKDTree(self._Xs)

    @property
    def estimator(self) -> str:
        return f"knn-{self.method.value}(k={self.k})"

    def query(self, windows, k: int | None = None, exclude_self: bool = False) -> np.ndarray:
        k = self.k if k is None else k
        q = (np.atleast_2d(np.asarray(windows, dtype=np.float64)) - self.center) / self.scale
        kk = k + 1 if exclude_self else k
        dist, idx = self._tree.query(q, k=kk)
        dist = dist.reshape(len(q), kk)
        idx = idx.reshape(len(q), kk)
        if exclude_self:
            dist, idx = dist[:, 1:], idx[:, 1:]
        resp = self.responses[idx]
        if self.method is Method.IDW or k == 1:
            exact = dist <= 1e-14 * (1.0 + dist.max(axis=1, keepdims=True))
            with np.errstate(divide="ignore"):
                w = np.where(exact.any(axis=1, keepdims=True), exact.astype(float), 1.0 / dist)
            w /= w.sum(axis=1, keepdims=True)
            return np.einsum("qk,qkm->qm", w, resp)
        span = dist[:, -1:] * (1.0 + 1e-6) + 1e-300
        w = (1.0 - (dist / span) ** 3) ** 3
        A = np.concatenate([np.ones(idx.shape + (1,)), self._Xs[idx] - q[:, None, :]], axis=2)
        AW = A * w[:, :, None]
        lhs = np.einsum("qki,qkj->qij", AW, A) + self.ridge * np.eye(A.shape[2])
        rhs = np.einsum("qki,qkm->qim", AW, resp)
        return np.linalg.solve(lhs, rhs)[:, 0, :]

    def __call__(self, windows) -> np.ndarray:
        return self.query(windows)

    def covariance(self, windows) -> np.ndarray:
        """Conditional covariance matrices (Q, m, m) for a covariance regressor."""
        out = self.query(windows)
        return out.reshape(len(out), self.m, self.m)

    def loo_error(self, n_points: int = 2000, k: int | None = None) -> float:
        """Leave-one-out RMS error on an evenly spaced subset of the reference set."""
        sel = np.linspace(0, len(self.inputs) - 1, min(n_points, len(self.inputs))).round().astype(int)
        pred = self.query(self.inputs[sel], k=k, exclude_self=True)
        return float(np.sqrt(np.mean((pred - self.responses[sel]) ** 2)))


def fit_conditional(traj: Trajectory, d: int, target=Target.Y_MEAN, k: int | None = None,
                    mean_reg: ConditionalRegressor | None = None, method=Method.LOCAL_LINEAR,
                    k_grid=K_GRID) -> ConditionalRegressor:
    """Regress y_{t-d} (or its residual outer product) on (x_{t-1}, ..., x_{t-d}).

    With ``k=None`` the mean regressor picks k from ``k_grid`` by leave-one-out
    error.  The covariance target uses leave-one-out residuals of the mean
    regressor (fitted here unless ``mean_reg`` is supplied) and k=ceil(sqrt(S)).
    """
    target = Target(target)
    if d < 1:
        raise ValueError("d must be >= 1")
    if len(traj) < 10 * d or len(traj) < d + 1:
        raise InsufficientDataError(f"need at least {10 * d} samples for d={d}, got {len(traj)}")
    X, Y, _ = _windows_and_lagged(traj, d)
    S = len(X)
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    m = Y.shape[1]
    if target is Target.Y_MEAN:
        if k is not None:
            return ConditionalRegressor(X, Y, int(k), center, scale, d, target, m, method)
        grid = [kk for kk in k_grid if kk < S] or [S - 1]
        reg = ConditionalRegressor(X, Y, grid[0], center, scale, d, target, m, method)
        if len(grid) > 1:
            reg.k = min(grid, key=lambda kk: reg.loo_error(k=kk))
        return reg
    if mean_reg is None:
        mean_reg = fit_conditional(traj, d, Target.Y_MEAN, method=method)
    resid = Y - mean_reg.query(X, exclude_self=True)
    outer = np.einsum("si,sj->sij", resid, resid).reshape(S, m * m)
    k = math.ceil(math.sqrt(S)) if k is None else int(k)
    return ConditionalRegressor(X, outer, k, center, scale, d, target, m, Method.IDW)


def _assemble(spec: SystemSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    z = np.empty((len(x), spec.dim))
    z[:, list(spec.observed)] = x
    z[:, list(spec.unobserved)] = y
    return z


def recursion_residuals(spec: SystemSpec, x: np.ndarray, y_start: np.ndarray, stops: np.ndarray, d: int,
                        return_chain: bool = False):
    """epsilon_t for each t = stop + 1, starting from (x_{t-d}, y_start).

    The true flow map is applied d times; after every step except the last the
    observed block is reset to the recorded x.  With ``return_chain`` the
    states entering each step are also returned (list of d arrays, oldest first).
    """
    z = _assemble(spec, x[stops - d + 1], y_start)
    obs = list(spec.observed)
    chain = []
    for step in range(d):
        chain.append(z.copy())
        z = flow_map_batch(z, spec)
        if step < d - 1:
            z[:, obs] = x[stops - d + 2 + step]
    eps = x[stops + 1] - z[:, obs]
    return (eps, chain) if return_chain else eps


@dataclass(frozen=True)
class RecursionErrorReport:
    system: str
    d: int
    eps_rms: float
    sigma_trace_mean: float
    n_eval: int
    estimator: str = ""

    def row(self) -> dict:
        return {"system": self.system, "d": self.d, "eps_rms": self.eps_rms,
                "sigma_trace_mean": self.sigma_trace_mean, "n_eval": self.n_eval, "estimator": self.estimator}


def _eval_stops(traj: Trajectory, d: int, max_points: int | None) -> np.ndarray:
    stops = np.arange(d - 1, len(traj) - 1)
    if max_points is not None and len(stops) > max_points:
        stops = stops[np.linspace(0, len(stops) - 1, max_points).round().astype(int)]
    return stops


def recursion_error(spec: SystemSpec, traj: Trajectory, reg: ConditionalRegressor, d: int,
                    max_points: int | None = None, scale: float | None = None) -> tuple[float, np.ndarray]:
    """RMS recursion error over ``traj`` (held-out data), in units of ``scale``.

    ``scale`` defaults to the standard deviation of the observed coordinate.
    Returns ``(eps_rms, eps)`` where ``eps`` holds the raw residuals.
    """
    if reg.d != d:
        raise ValueError(f"regressor fitted at d={reg.d}, asked for d={d}")
    x = traj.observed
    stops = _eval_stops(traj, d, max_points)
    y_hat = reg(delay_windows(x, d, stops))
    eps = recursion_residuals(spec, x, y_hat, stops, d)
    scale = float(np.std(x)) if scale is None else scale
    return float(np.sqrt(np.mean(eps ** 2)) / scale), eps


def propagate_covariance(P: np.ndarray, Qs, C: np.ndarray) -> np.ndarray:
    """P Q_1 ... Q_k C Q_k^T ... Q_1^T P^T, batched over a leading axis.

    ``Qs`` is ordered from the most recent step backwards (Q_{t-2}, ..., Q_{t-d}).
    """
    L = P
    for Q in Qs:
        L = L @ Q
    return L @ C @ np.swapaxes(L, -1, -2)


def first_order_sigma(spec: SystemSpec, windows, reg_mean: ConditionalRegressor,
                      reg_cov: ConditionalRegressor) -> np.ndarray:
    """First-order covariance of the recursion error for each delay window.

    ``windows`` are delay vectors (x_{t-1}, ..., x_{t-d}).  The unobserved state
    at intermediate steps comes from pushing the conditional mean through the
    true dynamics with observed blocks reset to data, the same chain used by
    ``recursion_error``.  Returns an (B, n, n) array.
    """
    d = reg_mean.d
    W = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    n = len(spec.observed)
    B = len(W)
    blocks = W.reshape(B, d, n)[:, ::-1]  # oldest first: x_{t-d}, ..., x_{t-1}
    obs, unobs = list(spec.observed), list(spec.unobserved)
    z = _assemble(spec, blocks[:, 0], reg_mean(W))
    C = reg_cov.covariance(W)
    Qs = []
    P = None
    for step in range(d):
        z_next, J = flow_jacobian_batch(z, spec)
        if step < d - 1:
            Qs.append(J[:, unobs][:, :, unobs])
            z = z_next
            z[:, obs] = blocks[:, step + 1]
        else:
            P = J[:, obs][:, :, unobs]
    return propagate_covariance(P, Qs[::-1], C)


def lv_exact_delay_map(x_prev, x_prev2, spec: SystemSpec):
    """Closed-form x_t from (x_{t-1}, x_{t-2}) for the LV map, y eliminated."""
    if spec.kind is not SystemKind.LV:
        raise ValueError("exact delay map exists only for the LV system")
    rx, ry, Axy, Ayx = (spec.params[k] for k in ("r_x", "r_y", "A_xy", "A_yx"))
    x1 = np.asarray(x_prev, dtype=np.float64)
    x2 = np.asarray(x_prev2, dtype=np.float64)
    if np.any(x2 == 0) or Axy == 0:
        raise SingularDelayMapError("x_{t-2} = 0 (or A_xy = 0): y cannot be recovered from two lags")
    y2 = (x1 - rx * x2 * (1.0 - x2)) / (Axy * x2)
    y1 = ry * y2 * (1.0 - y2) + Ayx * x2 * y2
    out = rx * x1 * (1.0 - x1) + Axy * x1 * y1
    return float(out) if out.ndim == 0 else out


def oracle_report(spec: SystemSpec, d: int, seed: int = 0, n_transient: int = 10000, n_fit: int = 10000,
                  n_eval: int = 10000, max_eval_points: int | None = None, traj: Trajectory | None = None,
                  sigma_points: int | None = 2000) -> RecursionErrorReport:
    """Recursion error and mean first-order covariance trace at depth ``d``.

    Protocol: simulate n_transient + n_fit + n_eval samples, discard the
    transient, fit on the next ``n_fit`` and evaluate on the last ``n_eval``.
    Both quantities are normalized by the observed coordinate's std (variance
    for the covariance trace).
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if traj is None:
        traj = simulate(spec, seed, n_fit + n_eval, n_transient)
    fit_part = traj.segment(0, n_fit)
    eval_part = traj.segment(n_fit)
    scale = float(np.std(traj.observed))
    reg_mean = fit_conditional(fit_part, d, Target.Y_MEAN)
    reg_cov = fit_conditional(fit_part, d, Target.Y_COVARIANCE, mean_reg=reg_mean)
    eps_rms, eps = recursion_error(spec, eval_part, reg_mean, d, max_eval_points, scale)
    stops = _eval_stops(eval_part, d, sigma_points)
    sig = first_order_sigma(spec, delay_windows(eval_part.observed, d, stops), reg_mean, reg_cov)
    tr = float(np.mean(np.trace(sig, axis1=1, axis2=2)) / scale ** 2)
    return RecursionErrorReport(spec.kind.value, d, eps_rms, tr, len(eps), reg_mean.estimator)
