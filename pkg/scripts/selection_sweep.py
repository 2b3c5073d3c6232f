"""Validation-selected hidden size (2..20) on the continuous systems, with
the recursion-error oracle curve for the one-step panels."""
import argparse
from pathlib import Path

from delayrnn import bench
from delayrnn.bench import ExperimentConfig
from delayrnn.dynamics import preset
from delayrnn.oracle import oracle_report
from delayrnn.plotting import write_panels


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--systems", nargs="+", default=["lorenz63", "duffing", "lorenz96"])
    ap.add_argument("--out", type=Path, default=Path("out/selection"))
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--train-sizes", type=int, nargs="+", default=[30, 50])
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--no-oracle", action="store_true")
    args = ap.parse_args()
    for name in args.systems:
        out = args.out / name
        out.mkdir(parents=True, exist_ok=True)
        cfg = ExperimentConfig(name, train_sizes=tuple(args.train_sizes), replicates=args.replicates,
                               select_hidden=True, workers=args.workers)
        rows = bench.run_sweep(cfg, progress=lambda i, n: print(f"\r{name} {i}/{n}", end="", flush=True))
        print()
        bench.write_csv(rows, out / "results.csv", bench.RESULT_COLUMNS)
        bench.write_csv(bench.aggregate(rows), out / "summary.csv", bench.SUMMARY_COLUMNS)
        bench.write_csv(bench.aggregate_baselines(bench.baseline_rows(cfg)), out / "baselines.csv",
                        bench.BASELINE_COLUMNS)
        oracle = None
        if not args.no_oracle:
            reports = [oracle_report(preset(name), d).row() for d in cfg.delays]
            bench.write_csv(reports, out / "oracle.csv", list(reports[0]))
            oracle = bench.read_csv(out / "oracle.csv")
        for p in write_panels(bench.read_csv(out / "summary.csv"), out / "figures",
                              bench.read_csv(out / "baselines.csv"), oracle):
            print(p)


if __name__ == "__main__":
    main()
