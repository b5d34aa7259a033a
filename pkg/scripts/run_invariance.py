#!/usr/bin/env python3
"""Randomized closed-loop safety-invariance sweep.

Simulates N randomized 30 s scenarios with the full stack (planner +
safety filter) and checks that the arm-obstacle clearance never drops
below d_min in any run.
"""
import argparse
import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from safearm.sim import make_random_scenario, run_scenario


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--duration", type=float, default=30.0)
    args = ap.parse_args()

    t0 = time.time()
    failures = []
    for seed in range(args.runs):
        sc = make_random_scenario(seed, duration=args.duration)
        m = run_scenario(sc, safety_on=True, planner_on=True).metrics
        status = "ok" if m.min_distance >= sc.safety.d_min else "VIOLATION"
        print(f"seed {seed:3d}: min_d={m.min_distance:.3f} "
              f"active={m.safety_active_fraction:.2f} {status}")
        if m.min_distance < sc.safety.d_min:
            failures.append(seed)
    print(f"{args.runs - len(failures)}/{args.runs} runs safe "
          f"({time.time() - t0:.1f} s)")
    if failures:
        print("violating seeds:", failures)
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
