"""Command-line front end.

Exit codes: 0 success, 2 scenario validation error, 3 safety violation
detected during a run (for CI gating).
"""

from __future__ import annotations

import argparse
import sys

from . import sim as simmod

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_VIOLATION = 3


def _load(path: str) -> simmod.Scenario:
    try:
        return simmod.load_scenario(path)
    except simmod.ScenarioError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def cmd_run(args) -> int:
    sc = _load(args.scenario)
    if args.seed is not None:
        sc.seed = args.seed
    result = simmod.run_scenario(sc, safety_on=args.safety != "off",
                                 planner_on=args.planner != "off")
    m = result.metrics
    if args.out:
        simmod.write_metrics(result, args.out)
        print(f"metrics written to {args.out}")
    print(f"min_distance={m.min_distance:.4f} m  "
          f"safety_active={m.safety_active_fraction:.3f}  "
          f"cycles={m.task_cycles}  hash={m.telemetry_hash[:12]}")
    if m.violation_intervals:
        print(f"danger-zone violations: {m.violation_intervals}", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.suite:
        suite = [simmod.BenchInstance(sc.name, sc.arm, sc.initial,
                                      sc.task.neutral_theta, None,
                                      sc.static_obstacles, sc.planner)
                 for sc in map(_load, args.suite.split(","))]
    else:
        suite = simmod.make_benchmark_suite(count=args.count, seed=args.seed or 0)
    solvers = tuple(args.solvers.split(","))
    rows = simmod.benchmark_cfs(suite, solvers)
    summary = simmod.benchmark_summary(rows)
    for solver, stats in summary.items():
        print(f"{solver}: {stats}")
    if args.out:
        simmod.write_benchmark(rows, summary, args.out)
        print(f"benchmark CSV written to {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from . import service
    sc = _load(args.scenario) if args.scenario else simmod.make_fig8_scenario()
    service.serve(sc, port=args.port, broadcast_hz=args.broadcast_hz)
    return EXIT_OK


def cmd_validate(args) -> int:
    _load(args.scenario)
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safearm",
                                description="planar safe-interaction engine")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and report metrics")
    r.add_argument("scenario")
    r.add_argument("--safety", choices=["on", "off"], default="on")
    r.add_argument("--planner", choices=["on", "off"], default="on")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="directory for metric files")
    r.set_defaults(fn=cmd_run)

    b = sub.add_parser("bench", help="benchmark trajectory solvers")
    b.add_argument("--suite", default=None,
                   help="comma-separated scenario files; default synthetic suite")
    b.add_argument("--count", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--solvers", default="cfs,baseline")
    b.add_argument("--out", default=None, help="CSV output path")
    b.set_defaults(fn=cmd_bench)

    s = sub.add_parser("serve", help="start the telemetry stream service")
    s.add_argument("--scenario", default=None)
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--broadcast-hz", type=float, default=30.0)
    s.set_defaults(fn=cmd_serve)

    v = sub.add_parser("validate", help="validate a scenario file")
    v.add_argument("scenario")
    v.set_defaults(fn=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
