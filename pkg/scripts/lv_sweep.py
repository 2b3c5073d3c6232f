"""Fixed-size sweep on the Lotka-Volterra map: nRMSE against number of
delays for FNN and RNN, hidden sizes 2/5/10, horizons 1-3."""
import argparse
from pathlib import Path

from delayrnn import bench
from delayrnn.bench import ExperimentConfig
from delayrnn.plotting import write_panels


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/lv_sweep"))
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--train-sizes", type=int, nargs="+", default=[50, 100])
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    cfg = ExperimentConfig("lv", train_sizes=tuple(args.train_sizes), replicates=args.replicates,
                           workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    rows = bench.run_sweep(cfg, progress=lambda i, n: print(f"\r{i}/{n}", end="", flush=True))
    print()
    bench.write_csv(rows, args.out / "results.csv", bench.RESULT_COLUMNS)
    bench.write_csv(bench.aggregate(rows), args.out / "summary.csv", bench.SUMMARY_COLUMNS)
    base = bench.aggregate_baselines(bench.baseline_rows(cfg))
    bench.write_csv(base, args.out / "baselines.csv", bench.BASELINE_COLUMNS)
    summary = bench.read_csv(args.out / "summary.csv")
    for p in write_panels(summary, args.out / "figures", bench.read_csv(args.out / "baselines.csv")):
        print(p)


if __name__ == "__main__":
    main()
