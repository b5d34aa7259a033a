#!/usr/bin/env python3
"""Safety-filter ablation on the fig8_neutral scenario.

Runs the scenario twice (filter on / filter off) and reports danger-zone
entries, first-activation timing, and minimum clearance for each run.
Artifacts (telemetry, safety log, summary) go to --out.
"""
import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from safearm.sim import make_fig8_scenario, run_scenario, write_metrics


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/ablation", help="output directory")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    results = {}
    for label, safety_on in (("safety_on", True), ("safety_off", False)):
        res = run_scenario(make_fig8_scenario(), safety_on=safety_on,
                           planner_on=True)
        results[label] = res
        write_metrics(res, out / label)
        m = res.metrics
        print(f"[{label}] min_d={m.min_distance:.3f} "
              f"violations={m.violation_intervals} "
              f"first_activation_tick={m.first_activation_tick}")

    on, off = results["safety_on"].metrics, results["safety_off"].metrics
    ok = (not on.violation_intervals and off.violation_intervals
          and on.first_activation_tick is not None
          and on.first_activation_tick * 0.1 < off.violation_intervals[0][0])
    print("ablation shape:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
