"""Command line entry points.

Subcommands:
  sim <scenario-file|preset>   run one scenario, write log CSV + report JSON
  sweep <preset-glob>          run matching presets in parallel
  map <surface>                analytical surfaces over the speed-torque grid
  eig                          eigenvalue trajectory against speed
  validate <scenario-file>     validate without running

Exit codes: 0 success, 1 validation failure, 2 numerical divergence.
"""

from __future__ import annotations

import argparse
import fnmatch
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np

from .analysis import OperatingGrid, eigen_sweep, evaluate_maps, write_maps_csv
from .estimator import ParameterVector
from .pu import ConfigError, default_machine
from .runner import SimulationDiverged, run
from .scenario import Scenario, load_scenario, preset_library

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DIVERGED = 2

SURFACES = ("sensitivity", "gradient", "hessian", "stability", "all")


def _resolve_scenario(ref: str) -> Scenario:
    presets = preset_library()
    if ref in presets:
        return presets[ref]
    if os.path.exists(ref):
        return load_scenario(ref)
    raise ConfigError(f"{ref!r} is neither a preset name nor a scenario file")


def _report_dict(result) -> dict:
    return {
        "scenario": result.scenario_name,
        "total_steps": result.total_steps,
        "mpp_steps": result.mpp_steps,
        "reports": {k: asdict(v) for k, v in result.reports.items()},
    }


def _run_one(ref: str, out_dir: str, seed: int | None) -> dict:
    scenario = _resolve_scenario(ref)
    if seed is not None:
        scenario = Scenario.from_dict({**scenario.to_dict(), "seed": seed})
    result = run(scenario)
    os.makedirs(out_dir, exist_ok=True)
    result.write_csv(os.path.join(out_dir, f"{scenario.name}.csv"))
    report = _report_dict(result)
    with open(os.path.join(out_dir, f"{scenario.name}_report.json"), "w") as f:
        json.dump(report, f, indent=2)
    return report


def cmd_sim(args: argparse.Namespace) -> int:
    report = _run_one(args.scenario, args.out, args.seed)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    names = sorted(
        name for name in preset_library() if fnmatch.fnmatch(name, args.pattern)
    )
    if not names:
        raise ConfigError(f"no presets match {args.pattern!r}")
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(
                pool.map(_run_one, names, [args.out] * len(names),
                         [args.seed] * len(names))
            )
    else:
        reports = [_run_one(name, args.out, args.seed) for name in names]
    for rep in reports:
        print(f"{rep['scenario']}: {json.dumps(rep['reports'])}")
    return EXIT_OK


def cmd_map(args: argparse.Namespace) -> int:
    if args.surface not in SURFACES:
        raise ConfigError(f"unknown surface {args.surface!r}; pick from {SURFACES}")
    base, params = default_machine()
    grid = OperatingGrid(
        speed_axis=np.linspace(args.speed_range[0], args.speed_range[1], args.points),
        torque_axis=np.linspace(
            args.torque_range[0], args.torque_range[1], args.points
        ),
    )
    deltas = (
        args.delta_psi * params.psi_m,
        args.delta_rs * params.r_s,
        args.delta_xd * params.x_d,
        args.delta_xq * params.x_q,
    )
    tables = evaluate_maps(grid, params, base.omega_n, deltas=deltas)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"map_{args.surface}.csv")
    write_maps_csv(tables, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_eig(args: argparse.Namespace) -> int:
    base, params = default_machine()
    theta = ParameterVector(psi_m=params.psi_m, r_s=params.r_s)
    speeds = np.linspace(args.speed_range[0], args.speed_range[1], args.points)
    rows = eigen_sweep(theta, (params.x_d, params.x_q), base.omega_n, speeds)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "eigenvalues.csv")
    with open(path, "w", newline="") as f:
        import csv as _csv

        w = _csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    scenario = _resolve_scenario(args.scenario)
    scenario.validate()
    print(f"{scenario.name}: valid")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rpemsim",
        description="IPMSM drive simulation with online parameter identification",
    )
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p.add_argument(
        "--format", default="csv", choices=["csv"], help="log format (csv only)"
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sim", help="run one scenario or preset")
    sp.add_argument("scenario")
    sp.set_defaults(func=cmd_sim)

    sp = sub.add_parser("sweep", help="run presets matching a glob pattern")
    sp.add_argument("pattern")
    sp.add_argument("--jobs", type=int, default=min(4, os.cpu_count() or 1))
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("map", help="analytical surface maps")
    sp.add_argument("surface", choices=SURFACES)
    sp.add_argument("--speed-range", type=float, nargs=2, default=(-1.0, 1.0))
    sp.add_argument("--torque-range", type=float, nargs=2, default=(-1.0, 1.0))
    sp.add_argument("--points", type=int, default=81)
    sp.add_argument("--delta-psi", type=float, default=-0.1,
                    help="relative flux mismatch for sensitivity surfaces")
    sp.add_argument("--delta-rs", type=float, default=0.0)
    sp.add_argument("--delta-xd", type=float, default=0.0)
    sp.add_argument("--delta-xq", type=float, default=0.0)
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("eig", help="eigenvalue trajectory over speed")
    sp.add_argument("--speed-range", type=float, nargs=2, default=(0.0, 1.2))
    sp.add_argument("--points", type=int, default=121)
    sp.set_defaults(func=cmd_eig)

    sp = sub.add_parser("validate", help="validate a scenario file")
    sp.add_argument("scenario")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SimulationDiverged as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    raise SystemExit(main())
