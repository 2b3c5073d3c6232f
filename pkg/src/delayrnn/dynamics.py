"""Benchmark dynamical systems, their flow maps and Table-style diagnostics.

Four systems are supported: a discrete two-species Lotka-Volterra map, Lorenz 63,
a forced Duffing oscillator written as an autonomous 4D system and Lorenz 96.
Continuous systems are advanced with fixed-step classical RK4; the Jacobian of
the flow map is obtained by integrating the variational equation on the same
grid, so it is the exact derivative of the discrete map that ``flow_map``
computes.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from numba import njit

from .errors import DegenerateSeriesError, DivergedError

__all__ = [
    "SystemKind",
    "SystemSpec",
    "Trajectory",
    "DiagnosticsReport",
    "PRESETS",
    "preset",
    "lv_step",
    "vector_field",
    "vector_field_jacobian",
    "flow_map",
    "flow_map_batch",
    "flow_jacobian",
    "flow_jacobian_batch",
    "simulate",
    "initial_condition",
    "lyapunov_exponent",
    "lag1_autocorrelation",
    "previous_value_nrmse",
    "diagnostics",
]


class SystemKind(str, enum.Enum):
    LV = "lv"
    LORENZ63 = "lorenz63"
    DUFFING = "duffing"
    LORENZ96 = "lorenz96"


PARAM_NAMES = {
    SystemKind.LV: ("r_x", "r_y", "A_xy", "A_yx"),
    SystemKind.LORENZ63: ("sigma", "rho", "beta"),
    SystemKind.DUFFING: ("alpha", "beta", "delta", "gamma", "omega"),
    SystemKind.LORENZ96: ("N", "F"),
}

_KIND_CODE = {
    SystemKind.LV: 0,
    SystemKind.LORENZ63: 1,
    SystemKind.DUFFING: 2,
    SystemKind.LORENZ96: 3,
}


@dataclass(frozen=True)
class SystemSpec:
    """One of the four benchmark systems plus its sampling setup.

    ``substeps`` is ignored for the discrete LV map (one map application per
    sample).  ``observed`` lists the state indices that are seen by the
    forecasting models; the rest form the unobserved block.
    """

    kind: SystemKind
    params: Mapping[str, float]
    sample_dt: float = 1.0
    substeps: int = 1
    observed: tuple[int, ...] = (0,)

    def __post_init__(self):
        kind = SystemKind(self.kind)
        object.__setattr__(self, "kind", kind)
        names = PARAM_NAMES[kind]
        missing = [k for k in names if k not in self.params]
        extra = [k for k in self.params if k not in names]
        if missing or extra:
            raise ValueError(f"{kind.value}: missing params {missing}, unknown params {extra}")
        object.__setattr__(self, "params", {k: float(self.params[k]) for k in names})
        object.__setattr__(self, "observed", tuple(int(i) for i in self.observed))
        if self.sample_dt <= 0:
            raise ValueError("sample_dt must be positive")
        if int(self.substeps) < 1:
            raise ValueError("substeps must be >= 1")
        object.__setattr__(self, "substeps", int(self.substeps))
        if kind is SystemKind.LORENZ96 and (self.params["N"] < 4 or self.params["N"] != int(self.params["N"])):
            raise ValueError("Lorenz 96 needs an integer N >= 4")
        M = self.dim
        if not self.observed or len(set(self.observed)) != len(self.observed):
            raise ValueError("observed indices must be non-empty and unique")
        if any(i < 0 or i >= M for i in self.observed) or len(self.observed) >= M:
            raise ValueError(f"observed indices {self.observed} invalid for state dimension {M}")

    @property
    def dim(self) -> int:
        if self.kind is SystemKind.LV:
            return 2
        if self.kind is SystemKind.LORENZ63:
            return 3
        if self.kind is SystemKind.DUFFING:
            return 4
        return int(self.params["N"])

    @property
    def unobserved(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.dim) if i not in self.observed)

    @property
    def is_discrete(self) -> bool:
        return self.kind is SystemKind.LV

    @property
    def param_array(self) -> np.ndarray:
        return np.array([self.params[k] for k in PARAM_NAMES[self.kind]], dtype=np.float64)

    @property
    def code(self) -> int:
        return _KIND_CODE[self.kind]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "params": dict(self.params),
            "sample_dt": self.sample_dt,
            "substeps": self.substeps,
            "observed": list(self.observed),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SystemSpec":
        return cls(
            kind=SystemKind(d["kind"]),
            params=dict(d["params"]),
            sample_dt=float(d.get("sample_dt", 1.0)),
            substeps=int(d.get("substeps", 1)),
            observed=tuple(d.get("observed", (0,))),
        )


# Preset parameters. Duffing: [alpha, beta, delta, gamma, omega] = [1, -1, 0.3, 0.5, 1.2].
PRESETS: dict[str, SystemSpec] = {
    "lv": SystemSpec(SystemKind.LV, {"r_x": 0.933, "r_y": 1.293, "A_xy": 0.758, "A_yx": 1.420}, 1.0, 1),
    "lorenz63": SystemSpec(SystemKind.LORENZ63, {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}, 0.1, 100),
    "duffing": SystemSpec(
        SystemKind.DUFFING,
        {"alpha": 1.0, "beta": -1.0, "delta": 0.3, "gamma": 0.5, "omega": 1.2},
        1.0,
        100,
    ),
    "lorenz96": SystemSpec(SystemKind.LORENZ96, {"N": 5, "F": 8.0}, 0.1, 100),
}

# Published reference values: (LE, lag-1 autocorrelation, previous-value nRMSE).
REFERENCE_DIAGNOSTICS = {
    "lv": (0.15, 0.632, 0.858),
    "lorenz63": (0.91, 0.869, 0.512),
    "duffing": (0.17, 0.667, 0.816),
    "lorenz96": (0.472, 0.866, 0.518),
}


def preset(name: str) -> SystemSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown system preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# numba kernels; kind codes: 0 LV, 1 Lorenz63, 2 Duffing4D, 3 Lorenz96


@njit(cache=True)
def _lv(p, z):
    x, y = z[0], z[1]
    out = np.empty(2)
    out[0] = p[0] * x * (1.0 - x) + p[2] * x * y
    out[1] = p[1] * y * (1.0 - y) + p[3] * x * y
    return out


@njit(cache=True)
def _lv_jac(p, z):
    x, y = z[0], z[1]
    J = np.empty((2, 2))
    J[0, 0] = p[0] * (1.0 - 2.0 * x) + p[2] * y
    J[0, 1] = p[2] * x
    J[1, 0] = p[3] * y
    J[1, 1] = p[1] * (1.0 - 2.0 * y) + p[3] * x
    return J


@njit(cache=True)
def _rhs(kind, p, z):
    M = z.shape[0]
    out = np.empty(M)
    if kind == 1:
        out[0] = p[0] * (z[1] - z[0])
        out[1] = z[0] * (p[1] - z[2]) - z[1]
        out[2] = z[0] * z[1] - p[2] * z[2]
    elif kind == 2:
        # state (x, y, v, z) with v = cos(wt), z = sin(wt)
        out[0] = z[1]
        out[1] = p[3] * z[2] - p[2] * z[1] - p[1] * z[0] - p[0] * z[0] ** 3
        out[2] = -p[4] * z[3]
        out[3] = p[4] * z[2]
    else:
        for i in range(M):
            out[i] = (z[(i + 1) % M] - z[(i - 2) % M]) * z[(i - 1) % M] - z[i] + p[1]
    return out


@njit(cache=True)
def _rhs_jac(kind, p, z):
    M = z.shape[0]
    A = np.zeros((M, M))
    if kind == 1:
        A[0, 0] = -p[0]
        A[0, 1] = p[0]
        A[1, 0] = p[1] - z[2]
        A[1, 1] = -1.0
        A[1, 2] = -z[0]
        A[2, 0] = z[1]
        A[2, 1] = z[0]
        A[2, 2] = -p[2]
    elif kind == 2:
        A[0, 1] = 1.0
        A[1, 0] = -p[1] - 3.0 * p[0] * z[0] ** 2
        A[1, 1] = -p[2]
        A[1, 2] = p[3]
        A[2, 3] = -p[4]
        A[3, 2] = p[4]
    else:
        for i in range(M):
            ip1 = (i + 1) % M
            im1 = (i - 1) % M
            im2 = (i - 2) % M
            A[i, ip1] += z[im1]
            A[i, im2] -= z[im1]
            A[i, im1] += z[ip1] - z[im2]
            A[i, i] -= 1.0
    return A


@njit(cache=True)
def _flow(kind, p, z, dt, substeps):
    if kind == 0:
        return _lv(p, z)
    h = dt / substeps
    z = z.copy()
    for _ in range(substeps):
        k1 = _rhs(kind, p, z)
        k2 = _rhs(kind, p, z + 0.5 * h * k1)
        k3 = _rhs(kind, p, z + 0.5 * h * k2)
        k4 = _rhs(kind, p, z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return z


@njit(cache=True)
def _flow_jac(kind, p, z, dt, substeps):
    """RK4 on the augmented (state, tangent matrix) system."""
    if kind == 0:
        return _lv(p, z), _lv_jac(p, z)
    M = z.shape[0]
    h = dt / substeps
    z = z.copy()
    J = np.eye(M)
    for _ in range(substeps):
        k1 = _rhs(kind, p, z)
        K1 = _rhs_jac(kind, p, z) @ J
        z2 = z + 0.5 * h * k1
        k2 = _rhs(kind, p, z2)
        K2 = _rhs_jac(kind, p, z2) @ (J + 0.5 * h * K1)
        z3 = z + 0.5 * h * k2
        k3 = _rhs(kind, p, z3)
        K3 = _rhs_jac(kind, p, z3) @ (J + 0.5 * h * K2)
        z4 = z + h * k3
        k4 = _rhs(kind, p, z4)
        K4 = _rhs_jac(kind, p, z4) @ (J + h * K3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        J = J + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
    return z, J


@njit(cache=True)
def _finite(a):
    for v in a.ravel():
        if not np.isfinite(v):
            return False
    return True


@njit(cache=True)
def _integrate(kind, p, z0, n_transient, n_keep, dt, substeps):
    M = z0.shape[0]
    out = np.empty((n_keep, M))
    z = z0.copy()
    for _ in range(n_transient):
        z = _flow(kind, p, z, dt, substeps)
        if not _finite(z):
            return out, False
    out[0] = z
    for t in range(1, n_keep):
        z = _flow(kind, p, z, dt, substeps)
        if not _finite(z):
            return out, False
        out[t] = z
    return out, True


@njit(cache=True)
def _flow_batch(kind, p, Z, dt, substeps):
    out = np.empty_like(Z)
    for i in range(Z.shape[0]):
        out[i] = _flow(kind, p, Z[i].copy(), dt, substeps)
    return out


@njit(cache=True)
def _flow_jac_batch(kind, p, Z, dt, substeps):
    B, M = Z.shape
    out = np.empty_like(Z)
    Js = np.empty((B, M, M))
    for i in range(B):
        z, J = _flow_jac(kind, p, Z[i].copy(), dt, substeps)
        out[i] = z
        Js[i] = J
    return out, Js


@njit(cache=True)
def _benettin(kind, p, z0, v0, n_warm, n, dt, substeps):
    z = z0.copy()
    v = v0 / np.sqrt(np.sum(v0 * v0))
    total = 0.0
    for t in range(n_warm + n):
        z_next, J = _flow_jac(kind, p, z, dt, substeps)
        v = J @ v
        norm = np.sqrt(np.sum(v * v))
        if not (_finite(z_next) and np.isfinite(norm)) or norm == 0.0:
            return total, False
        v = v / norm
        if t >= n_warm:
            total += np.log(norm)
        z = z_next
    return total, True


# ---------------------------------------------------------------------------
# public operations


def _state(state, spec: SystemSpec) -> np.ndarray:
    z = np.ascontiguousarray(state, dtype=np.float64)
    if z.shape != (spec.dim,):
        raise ValueError(f"state must have shape ({spec.dim},), got {z.shape}")
    return z


def _check(z: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(z)):
        raise DivergedError(f"non-finite state produced by {what}")
    return z


def lv_step(state, spec: SystemSpec) -> np.ndarray:
    """One application of the discrete Lotka-Volterra map."""
    if spec.kind is not SystemKind.LV:
        raise ValueError("lv_step requires a Lotka-Volterra spec")
    return _check(_lv(spec.param_array, _state(state, spec)), "lv_step")


def vector_field(state, spec: SystemSpec) -> np.ndarray:
    """Time derivative of a continuous system at ``state``."""
    if spec.is_discrete:
        raise ValueError("vector_field is only defined for continuous systems")
    return _rhs(spec.code, spec.param_array, _state(state, spec))


def vector_field_jacobian(state, spec: SystemSpec) -> np.ndarray:
    if spec.is_discrete:
        raise ValueError("vector_field_jacobian is only defined for continuous systems")
    return _rhs_jac(spec.code, spec.param_array, _state(state, spec))


def flow_map(state, spec: SystemSpec) -> np.ndarray:
    """Advance one sample interval."""
    z = _state(state, spec)
    _check(z, "flow_map input")
    return _check(_flow(spec.code, spec.param_array, z, spec.sample_dt, spec.substeps), "flow_map")


def flow_map_batch(states, spec: SystemSpec) -> np.ndarray:
    """``flow_map`` applied row-wise to a (B, M) array."""
    Z = np.ascontiguousarray(states, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != spec.dim:
        raise ValueError(f"states must have shape (B, {spec.dim})")
    return _check(_flow_batch(spec.code, spec.param_array, Z, spec.sample_dt, spec.substeps), "flow_map_batch")


def flow_jacobian(state, spec: SystemSpec) -> np.ndarray:
    """Jacobian (M x M) of ``flow_map`` at ``state``."""
    z = _state(state, spec)
    z1, J = _flow_jac(spec.code, spec.param_array, z, spec.sample_dt, spec.substeps)
    _check(z1, "flow_jacobian")
    return _check(J, "flow_jacobian")


def flow_jacobian_batch(states, spec: SystemSpec) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise flow map and Jacobians: returns ((B, M) states, (B, M, M) Jacobians)."""
    Z = np.ascontiguousarray(states, dtype=np.float64)
    Z1, Js = _flow_jac_batch(spec.code, spec.param_array, Z, spec.sample_dt, spec.substeps)
    return _check(Z1, "flow_jacobian_batch"), _check(Js, "flow_jacobian_batch")


def initial_condition(spec: SystemSpec, rng: np.random.Generator) -> np.ndarray:
    M = spec.dim
    if spec.kind is SystemKind.LV:
        return rng.uniform(0.1, 0.9, size=2)
    if spec.kind is SystemKind.LORENZ63:
        return np.ones(3) + rng.standard_normal(3)
    if spec.kind is SystemKind.DUFFING:
        xy = 0.5 * rng.standard_normal(2)
        return np.array([xy[0], xy[1], 1.0, 0.0])
    return spec.params["F"] + 0.1 * rng.standard_normal(M)


@dataclass(frozen=True)
class Trajectory:
    """T x M matrix of sampled states."""

    states: np.ndarray
    sample_dt: float
    system: SystemSpec
    seed: int | None = None

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] != self.system.dim:
            raise ValueError(f"states must be T x {self.system.dim}, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise DivergedError("trajectory contains non-finite states")
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def observed(self) -> np.ndarray:
        """T x n observed block."""
        return self.states[:, list(self.system.observed)]

    @property
    def unobserved(self) -> np.ndarray:
        return self.states[:, list(self.system.unobserved)]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.sample_dt

    def segment(self, start: int, stop: int | None = None) -> "Trajectory":
        return Trajectory(self.states[start:stop], self.sample_dt, self.system, self.seed)

    def to_csv(self, path=None) -> str:
        """Write ``t,z0,z1,...`` rows with 17 significant digits; returns the text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"z{i}" for i in range(self.system.dim)])
        for t, row in zip(self.times, self.states):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text, system: SystemSpec, seed: int | None = None) -> "Trajectory":
        text = str(path_or_text)
        if "\n" not in text:
            text = Path(text).read_text()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[0] != "t" or header[1:] != [f"z{i}" for i in range(system.dim)]:
            raise ValueError(f"unexpected trajectory header {header}")
        data = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
        dt = float(data[1, 0] - data[0, 0]) if len(data) > 1 else system.sample_dt
        return cls(data[:, 1:], dt, system, seed)


def simulate(spec: SystemSpec, seed: int, n_keep: int, n_transient: int = 1000,
             z0: np.ndarray | None = None) -> Trajectory:
    """Random initial condition, ``n_transient`` discarded samples, ``n_keep`` kept.

    The first kept row is the state after the transient (the initial condition
    itself when ``n_transient == 0``).
    """
    if n_keep < 1:
        raise ValueError("n_keep must be >= 1")
    if n_transient < 0:
        raise ValueError("n_transient must be >= 0")
    if z0 is None:
        z0 = initial_condition(spec, np.random.default_rng(seed))
    z0 = _state(z0, spec)
    states, ok = _integrate(spec.code, spec.param_array, z0, int(n_transient), int(n_keep),
                            spec.sample_dt, spec.substeps)
    if not ok:
        raise DivergedError(f"{spec.kind.value} orbit diverged for seed {seed}")
    return Trajectory(states, spec.sample_dt, spec, seed)


def lyapunov_exponent(spec: SystemSpec, seed: int, n_samples: int = 20000, n_warm: int = 1000,
                      n_transient: int = 1000) -> float:
    """Largest Lyapunov exponent per unit time (Benettin, renormalized every sample)."""
    rng = np.random.default_rng(seed)
    z0 = simulate(spec, seed, 1, n_transient).states[0].copy()
    v0 = rng.standard_normal(spec.dim)
    total, ok = _benettin(spec.code, spec.param_array, z0, v0, int(n_warm), int(n_samples),
                          spec.sample_dt, spec.substeps)
    if not ok:
        raise DivergedError("tangent propagation diverged")
    return total / (n_samples * spec.sample_dt)


def _series(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError("expected a scalar series")
        x = x[:, 0]
    if x.size < 2:
        raise DegenerateSeriesError("series needs at least two samples")
    if np.std(x) == 0.0:
        raise DegenerateSeriesError("series has zero variance")
    return x


def lag1_autocorrelation(x) -> float:
    """Lag-one sample autocorrelation using the full-series mean and variance."""
    x = _series(x)
    c = x - x.mean()
    return float(np.dot(c[:-1], c[1:]) / np.dot(c, c))


def previous_value_nrmse(x) -> float:
    """RMSE of predicting x_t by x_{t-1}, divided by the series standard deviation."""
    x = _series(x)
    return float(np.sqrt(np.mean(np.diff(x) ** 2)) / np.std(x))


@dataclass(frozen=True)
class DiagnosticsReport:
    lyapunov: float
    autocorr_dt: float
    prev_value_nrmse: float
    system: str = ""
    seed: int | None = None
    extra: dict = field(default_factory=dict)


def diagnostics(spec: SystemSpec, seed: int = 0, n_samples: int = 20000, n_transient: int = 1000) -> DiagnosticsReport:
    traj = simulate(spec, seed, n_samples, n_transient)
    x = traj.observed[:, 0]
    le = lyapunov_exponent(spec, seed, n_samples=n_samples, n_transient=n_transient)
    return DiagnosticsReport(le, lag1_autocorrelation(x), previous_value_nrmse(x), spec.kind.value, seed)
