#!/usr/bin/env python3
"""Long-term planner benchmark: sequential-convexification solver vs a
penalty-based nonlinear baseline on randomized planning instances.

Reports per-solver median wall time, iteration count, and final cost,
plus the share of solver time spent building convex regions.
"""
import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from safearm.sim import (benchmark_cfs, benchmark_summary,
                         make_benchmark_suite, write_benchmark)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/benchmark.csv")
    args = ap.parse_args()

    suite = make_benchmark_suite(count=args.count, seed=args.seed)
    rows = benchmark_cfs(suite)
    summary = benchmark_summary(rows)
    for solver, stats in summary.items():
        print(f"{solver}: " + ", ".join(f"{k}={v:.4g}" for k, v in stats.items()))
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_benchmark(rows, summary, str(out))
    print("wrote", out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
