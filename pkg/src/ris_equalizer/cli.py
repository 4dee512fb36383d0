"""Command line entry point: ``ris-equalizer {run,sweep,gradcheck,oracle}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from . import experiment
from .channel import ConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3


def _values(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _base_config(args) -> experiment.ExperimentConfig:
    cfg = (experiment.load_config(args.config) if args.config
           else experiment.ExperimentConfig())
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        overrides["runs"] = args.runs
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "axis", None) is not None:
        overrides["axis"] = args.axis
        overrides["values"] = tuple(args.values)
    if getattr(args, "timing", False):
        overrides["record_timing"] = True
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _study(args, cfg) -> int:
    out = args.out or experiment.default_out_dir()
    print(json.dumps(cfg.to_dict(), sort_keys=True))
    results, summaries = experiment.run_monte_carlo(cfg)
    experiment.write_study(cfg, results, summaries, out, args.format)
    for s in summaries:
        where = f"{s.axis}={s.axis_value:g} " if s.axis else ""
        print(f"{where}{s.scheme:8s} mean eta {s.eta_db_of_mean:8.3f} dB  (n={s.runs})")
    return EXIT_OK


def _gradcheck(args, cfg) -> int:
    report = experiment.gradcheck(cfg, args.trials, tolerance=args.tolerance)
    for i, t in enumerate(report.trials):
        print(f"trial {i:4d}  rel err {t.max_rel_error:.3e}  worst (k={t.worst_user}, "
              f"n={t.worst_element})")
    print(f"max relative error {report.max_rel_error:.3e} "
          f"({'PASS' if report.passed else 'FAIL'} at {report.tolerance:g})")
    return EXIT_OK if report.passed else EXIT_CHECK


def _oracle(args, cfg) -> int:
    report = experiment.oracle(cfg, args.draws, args.grid_step, args.restarts)
    for i, (p, g) in enumerate(zip(report.pso_eta, report.grid_eta)):
        print(f"draw {i:3d}  pso {p:.6f}  grid {g:.6f}  gap {p - g:+.2e}")
    print(f"{report.hits}/{len(report.pso_eta)} within {report.tolerance:g} "
          f"({'PASS' if report.passed else 'FAIL'})")
    return EXIT_OK if report.passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ris-equalizer",
                                     description="RIS spatial equalizer simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def study_opts(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory (default: $RIS_EQUALIZER_OUT or ./results)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--runs", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--timing", action="store_true", help="record wall times")

    run = sub.add_parser("run", help="Monte Carlo study at one operating point")
    study_opts(run)
    run.set_defaults(func=_study)

    sweep = sub.add_parser("sweep", help="Monte Carlo study along one axis")
    study_opts(sweep)
    sweep.add_argument("--axis", choices=experiment.AXES, required=True)
    sweep.add_argument("--values", type=_values, required=True,
                       help="comma or space separated axis values")
    sweep.set_defaults(func=_study)

    grad = sub.add_parser("gradcheck", help="analytic vs finite-difference phase gradient")
    grad.add_argument("--config")
    grad.add_argument("--trials", type=int, default=100)
    grad.add_argument("--tolerance", type=float, default=1e-4)
    grad.set_defaults(func=_gradcheck)

    orc = sub.add_parser("oracle", help="N=2, K=1 comparison against exhaustive search")
    orc.add_argument("--config")
    orc.add_argument("--grid-step", type=float, default=0.01)
    orc.add_argument("--draws", type=int, default=20)
    orc.add_argument("--restarts", type=int, default=8)
    orc.set_defaults(func=_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = _base_config(args)
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args, cfg)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
