"""Experiment grid: systems x training sizes x delays x hidden sizes x replicates.

Each replicate draws a fresh trajectory (seed = base_seed + replicate).  The
first ``train_size`` observations are the training series, split 75/25 into
train and validation delay datasets; the next ``train_size`` observations are
the out-of-sample test targets.  Models are trained on one-step data and
scored at horizons 1..3 by iterating the one-step map.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import SystemSpec, preset, simulate
from .embedding import NormalizationStats, SplitSpec, as_series, delay_windows, make_delay_dataset, nrmse, split
from .errors import DegenerateSeriesError, DivergedError, DivergedTrainingError
from .nets import Arch, TrainConfig, iterated_forecast, train

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "CellOutcome",
    "replicate_data",
    "run_cell",
    "select_hidden",
    "score_forecasts",
    "baselines",
    "run_sweep",
    "aggregate",
    "write_csv",
    "read_csv",
    "RESULT_COLUMNS",
    "SUMMARY_COLUMNS",
    "RESEED_OFFSET",
    "baseline_rows",
    "aggregate_baselines",
    "BASELINE_COLUMNS",
    "AUTO_H",
]

RESULT_COLUMNS = ["system", "arch", "train_size", "d", "h", "horizon", "replicate", "seed", "nrmse",
                  "best_epoch", "selected_h", "status"]
SUMMARY_COLUMNS = ["system", "arch", "train_size", "d", "h", "horizon", "n", "mean_nrmse", "stderr",
                   "single_replicate", "mean_selected_h"]
RESEED_OFFSET = 1_000_003
AUTO_H = "auto"


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid definition; ``system`` is a preset name or a full SystemSpec."""

    system: str | SystemSpec = "lv"
    train_sizes: tuple[int, ...] = (50,)
    delays: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    hidden_sizes: tuple[int, ...] = (2, 5, 10)
    replicates: int = 20
    horizons: tuple[int, ...] = (1, 2, 3)
    base_seed: int = 0
    architectures: tuple[str, ...] = ("fnn", "rnn")
    select_hidden: bool = False
    h_range: tuple[int, ...] = tuple(range(2, 21))
    n_transient: int = 1000
    workers: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if any(d < 1 or d > 8 for d in self.delays):
            raise ValueError("delays must lie in 1..8")
        if any(k < 1 for k in self.horizons):
            raise ValueError("horizons must be >= 1")
        for a in self.architectures:
            Arch(a)
        if not isinstance(self.system, SystemSpec):
            preset(self.system)

    @property
    def spec(self) -> SystemSpec:
        return self.system if isinstance(self.system, SystemSpec) else preset(self.system)

    @property
    def name(self) -> str:
        return self.system.kind.value if isinstance(self.system, SystemSpec) else self.system

    def seed(self, replicate: int) -> int:
        return self.base_seed + replicate


@dataclass
class CellOutcome:
    nrmse: dict[int, float]
    best_epoch: int
    val_loss: float
    h: int
    seed: int
    status: str = "ok"


def replicate_data(spec: SystemSpec, train_size: int, seed: int, n_transient: int = 1000) -> tuple[np.ndarray, int]:
    """Observed series of length 2 * train_size; re-seeds once on divergence.

    Returns ``(series, seed_used)``.
    """
    try:
        traj = simulate(spec, seed, 2 * train_size, n_transient)
        return traj.observed, seed
    except DivergedError:
        log.warning("seed %d diverged for %s, re-seeding once", seed, spec.kind.value)
        seed2 = seed + RESEED_OFFSET
        traj = simulate(spec, seed2, 2 * train_size, n_transient)
        return traj.observed, seed2


def _datasets(series: np.ndarray, train_size: int, d: int, split_spec: SplitSpec):
    train_series = series[:train_size]
    full = make_delay_dataset(train_series, d)
    tr, va = split(full, split_spec)
    return tr, va, full.norm


def score_forecasts(model, series: np.ndarray, train_size: int, d: int, horizons: Sequence[int],
                 norm: NormalizationStats) -> dict[int, float]:
    """Iterated-forecast nRMSE on targets series[train_size:2*train_size]."""
    K = max(horizons)
    N = train_size
    stops = np.arange(N - K, 2 * N - 1)
    windows = delay_windows(series, d, stops)
    preds = iterated_forecast(model, windows, K)  # (B, K, n); preds[b, k-1] targets stops[b] + k
    out = {}
    for k in horizons:
        rows = np.arange(K - k, K - k + N)
        out[k] = nrmse(preds[rows, k - 1], series[N:2 * N], norm)
    return out


def run_cell(spec: SystemSpec, arch, train_size: int, d: int, h: int, seed: int,
             config: TrainConfig = TrainConfig(), horizons: Sequence[int] = (1, 2, 3),
             n_transient: int = 1000, split_spec: SplitSpec = SplitSpec(), series=None) -> CellOutcome:
    """Train one model on a seeded replicate and score it on the test segment."""
    if series is None:
        series, seed = replicate_data(spec, train_size, seed, n_transient)
    tr, va, norm = _datasets(series, train_size, d, split_spec)
    model, hist = train(arch, h, tr, va, replace(config, seed=seed))
    scores = score_forecasts(model, series, train_size, d, horizons, norm)
    return CellOutcome(scores, hist.best_epoch, hist.best_val_loss, h, seed)


def select_hidden(spec: SystemSpec, arch, train_size: int, d: int, seed: int, h_range: Iterable[int],
                  config: TrainConfig = TrainConfig(), horizons: Sequence[int] = (1, 2, 3),
                  n_transient: int = 1000, split_spec: SplitSpec = SplitSpec(), series=None) -> CellOutcome:
    """Train one model per hidden size and keep the lowest validation loss.

    Selection never sees the test segment: only ``hist.best_val_loss`` is
    compared, and test scores are computed for the chosen model alone.
    """
    h_range = list(h_range)
    if not h_range:
        raise ValueError("h_range must be non-empty")
    if series is None:
        series, seed = replicate_data(spec, train_size, seed, n_transient)
    tr, va, norm = _datasets(series, train_size, d, split_spec)
    best = None
    for h in h_range:
        model, hist = train(arch, h, tr, va, replace(config, seed=seed))
        if best is None or hist.best_val_loss < best[2].best_val_loss:
            best = (h, model, hist)
    h, model, hist = best
    scores = score_forecasts(model, series, train_size, d, horizons, norm)
    return CellOutcome(scores, hist.best_epoch, hist.best_val_loss, h, seed)


def baselines(test_series, norm: NormalizationStats) -> tuple[float, float]:
    """(mean-predictor nRMSE, previous-value nRMSE) on a test series."""
    x = as_series(test_series)
    if len(x) < 2:
        raise ValueError("need at least two samples")
    if np.any(x.std(axis=0) == 0):
        raise DegenerateSeriesError("constant series: baselines are degenerate")
    mean_pred = np.broadcast_to(norm.mean, x.shape)
    return nrmse(mean_pred, x, norm), nrmse(x[:-1], x[1:], norm)


# ---------------------------------------------------------------------------
# sweeps


def _job(args):
    (system, spec, arch, train_size, d, h, replicate, seed, cfg, horizons, n_transient, h_range) = args
    base = {"system": system, "arch": arch, "train_size": train_size, "d": d, "replicate": replicate}
    try:
        if h == AUTO_H:
            out = select_hidden(spec, arch, train_size, d, seed, h_range, cfg, horizons, n_transient)
            h_col, sel = AUTO_H, out.h
        else:
            out = run_cell(spec, arch, train_size, d, h, seed, cfg, horizons, n_transient)
            h_col, sel = h, ""
    except (DivergedTrainingError, DivergedError) as exc:
        log.warning("replicate skipped: %s", exc)
        return [dict(base, h=h, horizon=k, seed=seed, nrmse="", best_epoch="", selected_h="",
                     status=f"failed:{type(exc).__name__}") for k in horizons]
    return [dict(base, h=h_col, horizon=k, seed=out.seed, nrmse=out.nrmse[k], best_epoch=out.best_epoch,
                 selected_h=sel, status="ok") for k in horizons]


def _jobs(cfg: ExperimentConfig):
    hs = [AUTO_H] if cfg.select_hidden else list(cfg.hidden_sizes)
    for train_size in cfg.train_sizes:
        for d in cfg.delays:
            for h in hs:
                for arch in cfg.architectures:
                    for r in range(cfg.replicates):
                        yield (cfg.name, cfg.spec, arch, train_size, d, h, r, cfg.seed(r), cfg.train, tuple(cfg.horizons),
                               cfg.n_transient, tuple(cfg.h_range))


def run_sweep(cfg: ExperimentConfig, progress=None) -> list[dict]:
    """All result rows for the grid, in a deterministic order."""
    jobs = list(_jobs(cfg))
    rows: list[dict] = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = pool.map(_job, jobs, chunksize=max(1, len(jobs) // (8 * cfg.workers)))
            for i, res in enumerate(results):
                rows.extend(res)
                if progress:
                    progress(i + 1, len(jobs))
    else:
        for i, job in enumerate(jobs):
            rows.extend(_job(job))
            if progress:
                progress(i + 1, len(jobs))
    return rows


def baseline_rows(cfg: ExperimentConfig) -> list[dict]:
    """Mean and previous-value nRMSE on each replicate's test segment."""
    rows = []
    for train_size in cfg.train_sizes:
        for r in range(cfg.replicates):
            try:
                series, seed = replicate_data(cfg.spec, train_size, cfg.seed(r), cfg.n_transient)
                norm = NormalizationStats.from_series(series[:train_size])
                mean_b, prev_b = baselines(series[train_size:], norm)
            except (DivergedError, DegenerateSeriesError) as exc:
                log.warning("baseline skipped: %s", exc)
                continue
            rows.append({"system": cfg.name, "train_size": train_size, "replicate": r, "seed": seed,
                         "mean_nrmse": mean_b, "prev_nrmse": prev_b})
    return rows


def aggregate_baselines(rows: Iterable[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for r in rows:
        groups[(r["system"], int(r["train_size"]))].append(r)
    out = []
    for (system, n), g in sorted(groups.items()):
        rec = {"system": system, "train_size": n, "n": len(g)}
        for col in ("mean_nrmse", "prev_nrmse"):
            v = np.array([float(r[col]) for r in g])
            rec[col] = float(v.mean())
            rec[col.replace("nrmse", "stderr")] = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        out.append(rec)
    return out


BASELINE_COLUMNS = ["system", "train_size", "n", "mean_nrmse", "mean_stderr", "prev_nrmse", "prev_stderr"]


def aggregate(rows: Iterable[dict]) -> list[dict]:
    """Mean and standard error of nRMSE per (system, arch, train_size, d, h, horizon)."""
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for r in rows:
        if r["status"] != "ok":
            continue
        key = (r["system"], r["arch"], int(r["train_size"]), int(r["d"]), str(r["h"]), int(r["horizon"]))
        groups[key].append(r)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3], _hkey(k[4]), k[5])):
        g = groups[key]
        vals = np.array(sorted(float(r["nrmse"]) for r in g))
        R = len(vals)
        stderr = float(vals.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
        sel = [float(r["selected_h"]) for r in g if str(r["selected_h"]) != ""]
        out.append({
            "system": key[0], "arch": key[1], "train_size": key[2], "d": key[3], "h": key[4], "horizon": key[5],
            "n": R, "mean_nrmse": float(math.fsum(vals) / R), "stderr": stderr, "single_replicate": R == 1,
            "mean_selected_h": float(math.fsum(sorted(sel)) / len(sel)) if sel else "",
        })
    return out


def _hkey(h: str):
    return (1, 0) if h == AUTO_H else (0, int(h))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(rows: Iterable[dict], path, columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
