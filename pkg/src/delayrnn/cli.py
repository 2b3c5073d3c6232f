"""Command-line entry point: ``delayrnn <command> [--config run.toml] [overrides]``.

Exit codes: 0 success, 1 I/O error, 2 configuration error, 3 numerical
divergence, 4 diagnostics outside tolerance.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import bench, plotting
from .config import RunConfig, build_system, load_config
from .dynamics import PRESETS, REFERENCE_DIAGNOSTICS, diagnostics, preset, simulate
from .embedding import make_delay_dataset, split
from .errors import ConfigError, DivergedError, DivergedTrainingError
from .nets import save_params, train
from .oracle import oracle_report

log = logging.getLogger("delayrnn")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED, EXIT_TOLERANCE = 0, 1, 2, 3, 4

# (LE, autocorrelation, previous-value nRMSE) tolerance bands
TOLERANCE = {"lv": (0.05, 0.02, 0.05), "lorenz63": (0.05, 0.02, 0.05),
             "duffing": (0.05, 0.02, 0.05), "lorenz96": (0.02, 0.02, 0.05)}

DIAG_COLUMNS = ["system", "seed", "lyapunov", "autocorr_dt", "prev_value_nrmse",
                "ref_lyapunov", "ref_autocorr", "ref_prev_value", "within_tolerance"]
ORACLE_COLUMNS = ["system", "d", "eps_rms", "sigma_trace_mean", "n_eval", "estimator"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _csv_ints(text: str) -> tuple[int, ...]:
    """'1,2,5' or '1-4' -> tuple of ints."""
    out = []
    for part in text.split(","):
        if "-" in part.strip()[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return _csv_ints(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like 1,2,3 or 1-8, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="delayrnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--system", help="system preset (overrides [system].preset)")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("simulate", help="write a trajectory CSV and JSON sidecar")
    common(sp)
    sp.add_argument("--n-keep", type=int)
    sp.add_argument("--n-transient", type=int)

    sp = sub.add_parser("diagnostics", help="Lyapunov exponent, autocorrelation, previous-value nRMSE")
    common(sp)
    sp.add_argument("--all", action="store_true", help="every preset (default when no system is given)")
    sp.add_argument("--n-samples", type=int, default=20000)
    sp.add_argument("--check", action="store_true", help="exit 4 if any value is outside tolerance")

    sp = sub.add_parser("train", help="train one network and save a JSON checkpoint")
    common(sp)
    sp.add_argument("--arch", choices=["fnn", "rnn"], default="rnn")
    sp.add_argument("--d", type=int, default=2)
    sp.add_argument("--h", type=int, default=5)
    sp.add_argument("--train-size", type=int, default=50)

    sp = sub.add_parser("oracle", help="recursion error and first-order covariance per delay")
    common(sp)
    sp.add_argument("--delays", type=_int_list)
    sp.add_argument("--n-fit", type=int)
    sp.add_argument("--n-eval", type=int)
    sp.add_argument("--n-transient", type=int)

    sp = sub.add_parser("bench", help="run an experiment grid")
    common(sp)
    sp.add_argument("--delays", type=_int_list)
    sp.add_argument("--hidden-sizes", type=_int_list)
    sp.add_argument("--train-sizes", type=_int_list)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--select-hidden", action="store_true", default=None)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--max-epochs", type=int)
    sp.add_argument("--oracle-csv", help="recursion-error CSV to overlay on the figures")
    sp.add_argument("--no-plot", action="store_true")

    sp = sub.add_parser("plot", help="render SVG panels from a summary CSV")
    sp.add_argument("summary")
    sp.add_argument("--baselines")
    sp.add_argument("--oracle-csv")
    sp.add_argument("--out", default="figures")
    return p


def _resolve(args) -> RunConfig:
    """Config file first, then command-line overrides."""
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.system is not None:
        if args.system not in PRESETS:
            raise ConfigError(f"system: unknown system {args.system!r}; choose from {sorted(PRESETS)}")
        name, spec = build_system({"preset": args.system})
        cfg = dataclasses.replace(cfg, system_name=name, system=spec,
                                  experiment=dataclasses.replace(cfg.experiment, system=name))
    return _override(cfg, args)


def _override(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    changes = {}
    for flag, field in (("seed", "seed"), ("n_keep", "n_keep"), ("n_transient", "n_transient")):
        if getattr(args, flag, None) is not None and args.command == "simulate":
            changes[field] = getattr(args, flag)
    if changes:
        cfg = dataclasses.replace(cfg, simulate=dataclasses.replace(cfg.simulate, **changes))
    try:
        if args.command == "oracle":
            o = {k: getattr(args, k) for k in ("delays", "n_fit", "n_eval", "n_transient", "seed")
                 if getattr(args, k, None) is not None}
            cfg = dataclasses.replace(cfg, oracle=dataclasses.replace(cfg.oracle, **o))
        if args.command == "bench":
            e = {k: getattr(args, k) for k in ("delays", "hidden_sizes", "train_sizes", "replicates",
                                                "select_hidden", "workers") if getattr(args, k, None) is not None}
            if args.seed is not None:
                e["base_seed"] = args.seed
            train_cfg = cfg.train
            if args.max_epochs is not None:
                train_cfg = dataclasses.replace(train_cfg, max_epochs=args.max_epochs)
            cfg = dataclasses.replace(cfg, train=train_cfg, plot=cfg.plot and not args.no_plot,
                                      experiment=dataclasses.replace(cfg.experiment, train=train_cfg, **e))
        if args.command == "train" and args.seed is not None:
            cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=args.seed))
    except ValueError as exc:
        raise ConfigError(f"{args.command}: {exc}") from None
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_simulate(cfg: RunConfig, args) -> int:
    s = cfg.simulate
    traj = simulate(cfg.system, s.seed, s.n_keep, s.n_transient)
    out = _outdir(cfg)
    stem = f"trajectory_{cfg.system_name}_seed{s.seed}"
    traj.to_csv(out / f"{stem}.csv")
    _write_json(out / f"{stem}.json", {
        "seed": s.seed, "n_keep": s.n_keep, "n_transient": s.n_transient, "system": cfg.system.to_dict(),
        "integrator": "rk4" if not cfg.system.is_discrete else "map",
        "sample_dt": cfg.system.sample_dt, "substeps": cfg.system.substeps,
    })
    print(out / f"{stem}.csv")
    return EXIT_OK


def cmd_diagnostics(cfg: RunConfig, args) -> int:
    names = sorted(PRESETS) if (args.all or (args.system is None and args.config is None)) else [cfg.system_name]
    seed = args.seed if args.seed is not None else cfg.simulate.seed
    rows, ok_all = [], True
    for name in names:
        spec = preset(name) if name != cfg.system_name else cfg.system
        rep = diagnostics(spec, seed, n_samples=args.n_samples)
        ref, tol = REFERENCE_DIAGNOSTICS[name], TOLERANCE[name]
        vals = (rep.lyapunov, rep.autocorr_dt, rep.prev_value_nrmse)
        ok = all(abs(v - r) <= t for v, r, t in zip(vals, ref, tol))
        ok_all &= ok
        rows.append({"system": name, "seed": seed, "lyapunov": vals[0], "autocorr_dt": vals[1],
                     "prev_value_nrmse": vals[2], "ref_lyapunov": ref[0], "ref_autocorr": ref[1],
                     "ref_prev_value": ref[2], "within_tolerance": ok})
    out = _outdir(cfg)
    bench.write_csv(rows, out / "diagnostics.csv", DIAG_COLUMNS)
    print(f"{'system':<10} {'LE':>8} {'autocorr':>9} {'prev':>7}   reference")
    for r in rows:
        mark = "ok" if r["within_tolerance"] else "MISMATCH"
        print(f"{r['system']:<10} {r['lyapunov']:8.3f} {r['autocorr_dt']:9.3f} {r['prev_value_nrmse']:7.3f}"
              f"   {r['ref_lyapunov']:.3f} {r['ref_autocorr']:.3f} {r['ref_prev_value']:.3f}  {mark}")
    if args.check and not ok_all:
        return EXIT_TOLERANCE
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    seed = cfg.train.seed
    series, seed = bench.replicate_data(cfg.system, args.train_size, seed, cfg.simulate.n_transient)
    full = make_delay_dataset(series[:args.train_size], args.d)
    tr, va = split(full)
    model, hist = train(args.arch, args.h, tr, va, dataclasses.replace(cfg.train, seed=seed))
    scores = bench.score_forecasts(model, series, args.train_size, args.d, (1, 2, 3), full.norm)
    out = _outdir(cfg)
    stem = f"{args.arch}_{cfg.system_name}_d{args.d}_h{args.h}_seed{seed}"
    save_params(model.params, out / f"{stem}.json", arch=args.arch, d=args.d, seed=seed,
                norm_mean=model.norm.mean.tolist(), norm_std=model.norm.std.tolist(),
                best_epoch=hist.best_epoch, epochs=hist.epochs, best_val_loss=hist.best_val_loss,
                test_nrmse={str(k): v for k, v in scores.items()})
    print(f"best epoch {hist.best_epoch}, test nRMSE " + " ".join(f"k={k}:{v:.4f}" for k, v in scores.items()))
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, args) -> int:
    o = cfg.oracle
    traj = simulate(cfg.system, o.seed, o.n_fit + o.n_eval, o.n_transient)
    rows = []
    for d in o.delays:
        rep = oracle_report(cfg.system, d, o.seed, o.n_transient, o.n_fit, o.n_eval, o.max_eval_points, traj=traj)
        rows.append(dict(rep.row(), system=cfg.system_name))
        print(f"d={d}  eps_rms={rep.eps_rms:.4g}  sigma_trace={rep.sigma_trace_mean:.4g}")
    bench.write_csv(rows, _outdir(cfg) / f"oracle_{cfg.system_name}.csv", ORACLE_COLUMNS)
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    exp = cfg.experiment
    out = _outdir(cfg)

    def progress(i, n):
        log.info("job %d/%d", i, n)

    rows = bench.run_sweep(exp, progress)
    bench.write_csv(rows, out / "results.csv", bench.RESULT_COLUMNS)
    bench.write_csv(bench.aggregate(rows), out / "summary.csv", bench.SUMMARY_COLUMNS)
    bench.write_csv(bench.aggregate_baselines(bench.baseline_rows(exp)), out / "baselines.csv",
                    bench.BASELINE_COLUMNS)
    n_failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} result rows ({n_failed} failed) -> {out}")
    if cfg.plot:
        oracle_csv = args.oracle_csv
        _plot(out / "summary.csv", out / "baselines.csv", oracle_csv, out / "figures")
    return EXIT_OK


def _plot(summary, baselines, oracle_csv, out_dir) -> list[Path]:
    summary_rows = bench.read_csv(summary)
    base = bench.read_csv(baselines) if baselines and Path(baselines).exists() else None
    orc = bench.read_csv(oracle_csv) if oracle_csv else None
    return plotting.write_panels(summary_rows, out_dir, base, orc)


def cmd_plot(args) -> int:
    for path in _plot(args.summary, args.baselines, args.oracle_csv, args.out):
        print(path)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "diagnostics": cmd_diagnostics, "train": cmd_train,
            "oracle": cmd_oracle, "bench": cmd_bench}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "plot":
            return cmd_plot(args)
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergedError, DivergedTrainingError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
