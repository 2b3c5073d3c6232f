"""End-to-end acceptance checks. Each test prints exactly one PASS/FAIL line."""
import dataclasses
import math

import numpy as np
import pytest

from delayrnn import bench
from delayrnn.bench import ExperimentConfig, aggregate, run_sweep
from delayrnn.dynamics import REFERENCE_DIAGNOSTICS, diagnostics, flow_map, preset, simulate, vector_field
from delayrnn.embedding import SplitSpec, delay_windows, make_delay_dataset, split
from delayrnn.nets import FnnParams, RnnParams, gradients, init_fnn, init_rnn
from delayrnn.oracle import (
    Target,
    fit_conditional,
    first_order_sigma,
    lv_exact_delay_map,
    oracle_report,
    propagate_covariance,
)

pytestmark = pytest.mark.slow

TOL = {"lv": (0.05, 0.02, 0.05), "lorenz63": (0.05, 0.02, 0.05),
       "duffing": (0.05, 0.02, 0.05), "lorenz96": (0.02, 0.02, 0.05)}


def test_criterion_1_diagnostics(verdict):
    parts, ok = [], True
    for name in ("lv", "lorenz63", "duffing", "lorenz96"):
        rep = diagnostics(preset(name), seed=0, n_samples=20000)
        got = (rep.lyapunov, rep.autocorr_dt, rep.prev_value_nrmse)
        ref = REFERENCE_DIAGNOSTICS[name]
        hits = [abs(g - r) <= t for g, r, t in zip(got, ref, TOL[name])]
        ok &= all(hits)
        parts.append(f"{name} LE {got[0]:.3f}/{ref[0]} ac {got[1]:.3f}/{ref[1]} "
                     f"prev {got[2]:.3f}/{ref[2]}{'' if all(hits) else ' [out]'}")
    assert verdict("criterion 1 (diagnostics)", ok, "; ".join(parts))


def test_criterion_2_lv_closure(verdict):
    lv = preset("lv")
    x = simulate(lv, 0, 10000, 10000).observed[:, 0]
    idx = np.random.default_rng(0).choice(np.arange(2, len(x)), 1000, replace=False)
    map_err = float(np.abs(lv_exact_delay_map(x[idx - 1], x[idx - 2], lv) - x[idx]).max())
    eps2 = oracle_report(lv, 2).eps_rms
    ok = map_err < 1e-10 and eps2 < 1e-3
    assert verdict("criterion 2 (LV closure)", ok, f"map max error {map_err:.2e}, eps_rms(d=2) {eps2:.2e}")


def test_criterion_3_recursion_knees(verdict):
    parts, ok = [], True
    for name, knee in (("lorenz63", 3), ("duffing", 4), ("lorenz96", 6)):
        spec = preset(name)
        traj = simulate(spec, 0, 20000, 10000)
        eps = {d: oracle_report(spec, d, traj=traj).eps_rms for d in range(1, 9)}
        knee_ok = eps[knee] < 0.2 * eps[1]
        mono_ok = all(eps[d + 1] <= 1.1 * eps[d] for d in range(1, 8))
        ok &= knee_ok and mono_ok
        curve = " ".join(f"{eps[d]:.3g}" for d in range(1, 9))
        parts.append(f"{name} knee d={knee} {'ok' if knee_ok else 'missed'}, "
                     f"monotone {'ok' if mono_ok else 'violated'} [{curve}]")
    assert verdict("criterion 3 (recursion knees)", ok, "; ".join(parts))


def _central_difference(params, X, Y, step=1e-6):
    theta = params.flatten()
    rebuild = (lambda t: FnnParams.from_flat(t, params.h, params.n, params.d)) if isinstance(params, FnnParams) \
        else (lambda t: RnnParams.from_flat(t, params.h, params.n))
    out = np.empty_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += step
        down[i] -= step
        out[i] = (gradients(rebuild(up), X, Y)[0] - gradients(rebuild(down), X, Y)[0]) / (2 * step)
    return out


def test_criterion_4_gradients(verdict):
    worst = 0.0
    for seed in range(5):
        for d in (1, 2, 4):
            for h in (2, 5):
                rng = np.random.default_rng(1000 + seed)
                X, Y = rng.standard_normal((8, d)), rng.standard_normal((8, 1))
                for params in (init_fnn(h, d, 1, rng), init_rnn(h, 1, rng)):
                    g = gradients(params, X, Y)[1].flatten()
                    fd = _central_difference(params, X, Y)
                    rel = np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-7)
                    worst = max(worst, float(rel))
    assert verdict("criterion 4 (gradients)", worst < 1e-5, f"worst relative error {worst:.2e} over 60 cases")


def _cells(summary, **key):
    return {s["arch"]: s for s in summary if all(s[k] == v for k, v in key.items())}


def test_criterion_5_lv_ordering(verdict):
    cfg = ExperimentConfig("lv", train_sizes=(50,), delays=(2, 3, 4), hidden_sizes=(2,), replicates=20)
    summary = aggregate(run_sweep(cfg))
    parts, ok = [], True
    for d in cfg.delays:
        c1, c3 = _cells(summary, d=d, horizon=1), _cells(summary, d=d, horizon=3)
        gap1 = c1["fnn"]["mean_nrmse"] - c1["rnn"]["mean_nrmse"]
        gap3 = c3["fnn"]["mean_nrmse"] - c3["rnn"]["mean_nrmse"]
        se1 = math.hypot(c1["fnn"]["stderr"], c1["rnn"]["stderr"])
        se3 = math.hypot(c3["fnn"]["stderr"], c3["rnn"]["stderr"])
        cell_ok = gap1 > se1 and gap3 - gap1 > se3
        ok &= cell_ok
        parts.append(f"d={d} rnn {c1['rnn']['mean_nrmse']:.3f} fnn {c1['fnn']['mean_nrmse']:.3f} "
                     f"gap1 {gap1:.3f}±{se1:.3f} gap3 {gap3:.3f}±{se3:.3f}{'' if cell_ok else ' [out]'}")
    assert verdict("criterion 5 (LV RNN vs FNN)", ok, "; ".join(parts))


def test_criterion_6_selection_robustness(verdict):
    base = ExperimentConfig("lorenz63", train_sizes=(30,), delays=tuple(range(2, 9)), replicates=20,
                            horizons=(1,), select_hidden=True)
    l63 = aggregate(run_sweep(base))
    spread = {}
    for arch in ("fnn", "rnn"):
        means = [s["mean_nrmse"] for s in l63 if s["arch"] == arch]
        spread[arch] = max(means) - min(means)
    l96 = aggregate(run_sweep(dataclasses.replace(base, system="lorenz96")))
    sel = {arch: float(np.mean([s["mean_selected_h"] for s in l96 if s["arch"] == arch])) for arch in ("fnn", "rnn")}
    ok = spread["rnn"] <= spread["fnn"] and sel["rnn"] <= sel["fnn"]
    assert verdict("criterion 6 (selection robustness)", ok,
                   f"L63 spread rnn {spread['rnn']:.3f} fnn {spread['fnn']:.3f}; "
                   f"L96 mean selected h rnn {sel['rnn']:.2f} fnn {sel['fnn']:.2f}")


def test_criterion_7_structural_invariants(verdict, tmp_path):
    rng = np.random.default_rng(7)
    checks = {}

    duf = preset("duffing")
    worst = 0.0
    for _ in range(20):
        phase = rng.uniform(0, 2 * np.pi)
        z = np.array([*rng.uniform(-2, 2, 2), np.cos(phase), np.sin(phase)])
        for _ in range(50):
            z1 = flow_map(z, duf)
            worst = max(worst, abs(z1[2] ** 2 + z1[3] ** 2 - z[2] ** 2 - z[3] ** 2))
            z = z1
    checks["duffing circle"] = worst < 1e-8

    l96 = preset("lorenz96")
    z = rng.uniform(-5, 10, 5)
    checks["L96 rotation"] = (np.allclose(vector_field(np.roll(z, 2), l96), np.roll(vector_field(z, l96), 2),
                                          rtol=0, atol=1e-12)
                              and np.allclose(flow_map(np.roll(z, 1), l96), np.roll(flow_map(z, l96), 1),
                                              rtol=0, atol=1e-10))

    rnn_counts = {init_rnn(10, 1, rng).n_params for _ in range(8)}
    fnn_counts = [init_fnn(10, d, 1, rng).n_params for d in range(1, 9)]
    checks["parameter counts"] = rnn_counts == {251} and set(np.diff(fnn_counts)) == {10}

    l63 = preset("lorenz63")
    traj = simulate(l63, 0, 4000, 1000)
    fit, ev = traj.segment(0, 3000), traj.segment(3000)
    reg = fit_conditional(fit, 3)
    cov = fit_conditional(fit, 3, Target.Y_COVARIANCE, mean_reg=reg)
    S = first_order_sigma(l63, delay_windows(ev.observed, 3, np.arange(2, 500)), reg, cov)
    P, Qs = rng.standard_normal((50, 1, 2)), [rng.standard_normal((50, 2, 2)) for _ in range(3)]
    L = rng.standard_normal((50, 2, 2))
    S2 = propagate_covariance(P, Qs, L @ np.swapaxes(L, 1, 2))
    checks["sigma psd"] = bool(np.all(S >= 0) and np.allclose(S2, np.swapaxes(S2, 1, 2))
                               and np.all(np.linalg.eigvalsh(S2) >= -1e-10 * np.abs(S2).max()))

    ds = make_delay_dataset(traj.observed[:200], 4)
    tr, va = split(ds, SplitSpec())
    checks["split leakage"] = tr.target_times.max() < va.target_times.min() and len(tr) == math.ceil(0.75 * len(ds))

    cfg = ExperimentConfig("lorenz63", train_sizes=(30,), delays=(1, 3), hidden_sizes=(3,), replicates=3,
                           train=dataclasses.replace(ExperimentConfig().train, max_epochs=500))
    paths = []
    for i in range(2):
        rows = run_sweep(cfg)
        paths.append(tmp_path / f"results{i}.csv")
        bench.write_csv(rows, paths[-1], bench.RESULT_COLUMNS)
    checks["sweep determinism"] = paths[0].read_bytes() == paths[1].read_bytes()

    ok = all(checks.values())
    detail = ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items())
    assert verdict("criterion 7 (structural invariants)", ok, detail)
