"""Delay-vector datasets, chronological splits and the normalized RMSE."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateSeriesError, ShapeMismatchError, TooShortError

__all__ = [
    "NormalizationStats",
    "DelayDataset",
    "SplitSpec",
    "as_series",
    "make_delay_dataset",
    "split",
    "nrmse",
    "delay_windows",
]


def as_series(series) -> np.ndarray:
    """Coerce to a float (T, n) array; 1-D input becomes a single column."""
    a = np.asarray(series, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ShapeMismatchError(f"series must be 1-D or 2-D, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if mean.shape != std.shape:
            raise ShapeMismatchError("mean and std must have the same shape")
        if np.any(~np.isfinite(std)) or np.any(std <= 0):
            raise DegenerateSeriesError("standard deviation must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def from_series(cls, series) -> "NormalizationStats":
        a = as_series(series)
        std = a.std(axis=0)
        if np.any(std == 0):
            raise DegenerateSeriesError("series has zero variance; cannot normalize")
        return cls(a.mean(axis=0), std)

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    def standardize(self, values: np.ndarray) -> np.ndarray:
        """Standardize an (..., k*n) array whose last axis cycles through the n components."""
        v = np.asarray(values, dtype=np.float64)
        reps = v.shape[-1] // self.n
        return (v - np.tile(self.mean, reps)) / np.tile(self.std, reps)

    def destandardize(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        reps = v.shape[-1] // self.n
        return v * np.tile(self.std, reps) + np.tile(self.mean, reps)


def delay_windows(series, d: int, stop_indices) -> np.ndarray:
    """Delay vectors (x_i, x_{i-1}, ..., x_{i-d+1}) for each i in ``stop_indices``."""
    a = as_series(series)
    idx = np.asarray(stop_indices, dtype=int)[:, None] - np.arange(d)[None, :]
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise TooShortError("delay window reaches outside the series")
    return a[idx].reshape(len(idx), d * a.shape[1])


@dataclass(frozen=True)
class DelayDataset:
    """Delay-vector inputs (most recent lag first) and ``horizon``-step targets.

    Row ``s`` holds ``(x_{s+d-1}, ..., x_s)`` and the target ``x_{s+d-1+horizon}``
    where ``s`` counts from ``offset`` in the source series.
    """

    inputs: np.ndarray
    targets: np.ndarray
    d: int
    n: int
    horizon: int
    norm: NormalizationStats
    offset: int = 0

    def __post_init__(self):
        if self.inputs.shape != (len(self.targets), self.d * self.n) or self.targets.shape[1:] != (self.n,):
            raise ShapeMismatchError("inputs/targets shapes inconsistent with d and n")
        if np.isnan(self.inputs).any() or np.isnan(self.targets).any():
            raise ValueError("dataset contains NaN")

    def __len__(self) -> int:
        return self.targets.shape[0]

    @property
    def empty(self) -> bool:
        return len(self) == 0

    @property
    def target_times(self) -> np.ndarray:
        """Index of each target in the source series."""
        return self.offset + np.arange(len(self)) + self.d - 1 + self.horizon

    @property
    def input_times(self) -> np.ndarray:
        """Index of the earliest lag of each row in the source series."""
        return self.offset + np.arange(len(self))

    def subset(self, start: int, stop: int | None = None) -> "DelayDataset":
        stop = len(self) if stop is None else stop
        return DelayDataset(self.inputs[start:stop], self.targets[start:stop], self.d, self.n,
                            self.horizon, self.norm, self.offset + start)

    def header(self) -> list[str]:
        cols = [f"lag_{k}_{j}" for k in range(1, self.d + 1) for j in range(self.n)]
        return cols + [f"target_{j}" for j in range(self.n)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for xi, yi in zip(self.inputs, self.targets):
            w.writerow([f"{v:.17g}" for v in np.concatenate([xi, yi])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text, norm: NormalizationStats, horizon: int = 1) -> "DelayDataset":
        text = str(path_or_text)
        if "\n" not in text:
            text = Path(text).read_text()
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        n = sum(1 for c in header if c.startswith("target_"))
        d = (len(header) - n) // n
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(-1, len(header))
        ds = cls(data[:, : d * n], data[:, d * n:], d, n, horizon, norm)
        if ds.header() != header:
            raise ValueError(f"unexpected dataset header {header}")
        return ds


def make_delay_dataset(series, d: int, horizon: int = 1, norm: NormalizationStats | None = None) -> DelayDataset:
    """Build (delay vector, target) pairs from a (T, n) series.

    ``norm`` defaults to statistics of the full provided series; pass the
    training statistics explicitly when embedding validation or test data.
    """
    if d < 1 or horizon < 1:
        raise ValueError("d and horizon must be >= 1")
    a = as_series(series)
    T, n = a.shape
    if T < d + horizon:
        raise TooShortError(f"series of length {T} too short for d={d}, horizon={horizon}")
    if np.isnan(a).any():
        raise ValueError("series contains NaN")
    S = T - d - horizon + 1
    inputs = delay_windows(a, d, np.arange(S) + d - 1)
    targets = a[d - 1 + horizon: d - 1 + horizon + S]
    if norm is None:
        norm = NormalizationStats.from_series(a)
    return DelayDataset(inputs, targets.copy(), d, n, horizon, norm)


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.75
    val_frac: float = 0.25
    policy: str = "chronological"

    def __post_init__(self):
        if not (0 < self.train_frac <= 1) or self.val_frac < 0:
            raise ValueError("fractions must satisfy 0 < train_frac <= 1, val_frac >= 0")
        if not math.isclose(self.train_frac + self.val_frac, 1.0):
            raise ValueError("train_frac + val_frac must equal 1")
        if self.policy != "chronological":
            raise ValueError("only chronological splits are supported")

    @property
    def no_validation(self) -> bool:
        return self.val_frac == 0


def split(dataset: DelayDataset, spec: SplitSpec = SplitSpec()) -> tuple[DelayDataset, DelayDataset]:
    """Chronological split: first ceil(train_frac * S) rows train, rest validation.

    With ``train_frac == 1`` the validation set is empty (``.empty`` is True),
    which ``nets.train`` treats as the no-validation case.
    """
    S = len(dataset)
    if S < 4:
        raise TooShortError(f"need at least 4 samples to split, got {S}")
    n_train = min(S, math.ceil(spec.train_frac * S - 1e-9))
    return dataset.subset(0, n_train), dataset.subset(n_train, S)


def nrmse(predictions, targets, norm: NormalizationStats) -> float:
    """RMSE in units of the normalization std: sqrt(mean over samples and components)."""
    p = as_series(predictions)
    t = as_series(targets)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"predictions {p.shape} vs targets {t.shape}")
    if p.shape[0] < 1:
        raise ShapeMismatchError("need at least one sample")
    if p.shape[1] != norm.n:
        raise ShapeMismatchError("normalization dimension mismatch")
    z = (p - t) / norm.std
    return float(np.sqrt(np.mean(z ** 2)))
