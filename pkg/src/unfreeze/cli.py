"""Command-line front end.

Usage::

    unfreeze {solve,converge,unique,multi,compare,audit} --config run.ini [--out DIR] [--seed N] [--verbose]

Exit status is 0 when every asserted invariant of the dispatched run holds.
Failures map onto categories: 2 invalid config, 3 solver failure,
4 no convergence, 5 bracket failure. ``audit`` only reports and exits 0
whenever the configuration is valid.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .config import RunConfig, parse_config
from .errors import UnfreezeError, ValidationError
from .experiments import ExperimentResult, ExperimentSpec, format_value, run_experiment, run_solve

log = logging.getLogger("unfreeze")

COMMANDS = {
    "solve": None,
    "converge": "convergence",
    "unique": "uniqueness",
    "multi": "multiplicity",
    "compare": "compare_desingularization",
    "audit": "hypothesis_audit",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unfreeze",
        description="Frozen-gradient fixed-point solver for singular convective quasilinear problems.",
    )
    parser.add_argument("command", choices=list(COMMANDS), help="pipeline or campaign to run")
    parser.add_argument("--config", required=True, help="path to the INI run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, default=None, help="seed for randomized starts (nonnegative)")
    parser.add_argument("--verbose", "-v", action="count", default=0, help="more logging; repeat for debug")
    return parser


def apply_overrides(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    exp = replace(cfg.experiment, seed=seed) if cfg.experiment is not None else None
    return replace(cfg, solver=replace(cfg.solver, seed=seed), experiment=exp, warnings=list(cfg.warnings))


def output_dir(cfg: RunConfig, out: str | None) -> str:
    if out is not None:
        return out
    if cfg.experiment is not None and cfg.experiment.output:
        return cfg.experiment.output
    return cfg.output_dir


def dispatch(command: str, cfg: RunConfig) -> ExperimentResult:
    kind = COMMANDS[command]
    if kind is None:
        return run_solve(cfg.problem, cfg.solver)
    base = cfg.experiment or ExperimentSpec(seed=cfg.solver.seed)
    exp = replace(base, kind=kind)
    problems = exp.validate()
    if problems:
        raise ValidationError(problems)
    return run_experiment(exp, cfg.problem, cfg.solver)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.seed is not None and args.seed < 0:
            raise ValidationError(f"seed must be nonnegative, got {args.seed}")
        cfg = apply_overrides(parse_config(args.config), args.seed)
        for msg in cfg.warnings:
            log.warning(msg)
        result = dispatch(args.command, cfg)
    except UnfreezeError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code
    written = result.write(output_dir(cfg, args.out))
    status = "PASS" if result.passed else "FAIL"
    print(f"{args.command}: {status} (exit {result.exit_code})")
    for key, value in result.summary.items():
        print(f"  {key} = {format_value(value)}")
    for path in written:
        log.info("wrote %s", path)
    if result.kind == "hypothesis_audit":
        for row in result.table.rows:
            if row[1] == "warning":
                print(f"  warning: {row[0]} {row[3]}".rstrip())
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
