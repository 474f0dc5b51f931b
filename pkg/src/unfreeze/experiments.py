"""Scripted verification campaigns and the single-run driver.

Every campaign returns an :class:`ExperimentResult` holding a main CSV table,
optional extra tables, traces and nodal fields, and a flat key/value summary.
Floats are written with ``repr`` so identical inputs give byte-identical
files. Runs are sequential and tables are assembled in input order, so
results never depend on timing.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .bracket import (
    Bracket,
    constant_pair,
    hardy_sobolev_check,
    shift_reaction,
    shifted_bracket,
)
from .errors import BracketError, BracketLadderFailed, ValidationError
from .fixed_point import FixedPointTrace, iterate_scalar, iterate_system
from .frozen_solver import ScalarProblem, SystemProblem
from .grid import Grid, write_field_csv
from .problems import (
    ProblemConfig,
    SolverConfig,
    build_bracket,
    build_grid_for,
    build_manufactured,
    build_problem,
    build_reaction,
    random_starts,
)
from .reactions import check_growth, check_monotone_decreasing, check_parameter_chain

log = logging.getLogger(__name__)

# Max error (relative to max |u*|) below which a manufactured run counts as exact.
EXACT_ERROR = 1e-10

KINDS = ("convergence", "uniqueness", "multiplicity", "compare_desingularization", "hypothesis_audit")


# -- specs and results ------------------------------------------------------------------


@dataclass
class ExperimentSpec:
    kind: str = "convergence"
    levels: tuple[int, ...] = (16, 32, 64)
    seed: int = 0
    n_starts: int = 5
    start_width: float = 2.0
    unique_tol: float = 1e-6
    ladder_K: int = 3
    ladder_start: float = 0.5
    ladder_step: float = 2.0
    ladder_width: float = 1.0
    min_separation: float = 0.5
    eps_schedule: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4)
    output: str | None = None

    def validate(self) -> list[str]:
        problems = []
        if self.kind not in KINDS:
            problems.append(f"experiment kind must be one of {KINDS}, got {self.kind!r}")
        lv = list(self.levels)
        if any(b <= a for a, b in zip(lv, lv[1:])):
            problems.append(f"grid levels must be strictly increasing, got {lv}")
        if any(n < 2 for n in lv):
            problems.append("grid levels must be at least 2")
        if self.kind == "convergence" and len(lv) < 2:
            problems.append("convergence experiments need at least 2 grid levels")
        if self.n_starts < 2:
            problems.append("uniqueness needs at least 2 starts")
        if not self.start_width > 0:
            problems.append("start_width must be positive")
        if not self.unique_tol > 0:
            problems.append("unique_tol must be positive")
        if self.ladder_K < 1:
            problems.append("ladder_K must be at least 1")
        if not (0 < self.ladder_width and self.ladder_width < self.ladder_step):
            problems.append("ladder_width must lie in (0, ladder_step) so that brackets do not overlap")
        eps = list(self.eps_schedule)
        if not eps or any(e <= 0 for e in eps):
            problems.append("eps_schedule must be a nonempty list of positive shifts")
        elif any(b >= a for a, b in zip(eps, eps[1:])):
            problems.append("eps_schedule must be strictly decreasing")
        if self.seed < 0:
            problems.append("seed must be nonnegative")
        return problems


def format_value(v) -> str:
    """Deterministic text for CSV cells and summaries."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([format_value(v) for v in row])


@dataclass
class ExperimentResult:
    kind: str
    table: Table
    summary: dict = field(default_factory=dict)
    passed: bool = True
    fail_code: int = 4
    extra_tables: dict[str, Table] = field(default_factory=dict)
    traces: dict[str, FixedPointTrace] = field(default_factory=dict)
    fields: dict[str, tuple[Grid, dict]] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else self.fail_code

    def write(self, outdir) -> list[Path]:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        path = out / f"{self.kind}.csv"
        self.table.write_csv(path)
        written.append(path)
        for name, table in self.extra_tables.items():
            path = out / f"{self.kind}_{name}.csv"
            table.write_csv(path)
            written.append(path)
        for name, trace in self.traces.items():
            path = out / f"{self.kind}_trace_{name}.csv"
            trace.write_csv(path)
            written.append(path)
        for name, (grid, columns) in self.fields.items():
            path = out / f"{self.kind}_field_{name}.csv"
            write_field_csv(path, grid, columns)
            written.append(path)
        path = out / f"{self.kind}_summary.txt"
        lines = [f"kind = {self.kind}", f"passed = {format_value(self.passed)}"]
        lines += [f"{k} = {format_value(v)}" for k, v in self.summary.items()]
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
        return written


def _iterate(problem: ScalarProblem, bracket, solver: SolverConfig, w0=None, warm_start=None):
    return iterate_scalar(
        problem,
        bracket,
        w0=w0,
        tol_fp=solver.tol_fp,
        max_outer=solver.max_outer,
        tol=solver.tol,
        tol_res=solver.tol_res,
        warm_start=solver.warm_start if warm_start is None else warm_start,
        max_iter=solver.max_iter,
        max_backtracks=solver.max_backtracks,
    )


def _require_valid(*objs) -> None:
    problems = [msg for obj in objs for msg in obj.validate()]
    if problems:
        raise ValidationError(problems)


def _scalar_only(cfg: ProblemConfig, what: str) -> None:
    if cfg.arity != "scalar":
        raise ValidationError(f"{what} needs a scalar problem")


# -- single run ---------------------------------------------------------------------------


def run_solve(problem: ProblemConfig, solver: SolverConfig | None = None) -> ExperimentResult:
    """One full pipeline run: bracket, outer fixed-point loop, witnesses."""
    solver = solver or SolverConfig()
    _require_valid(problem, solver)
    prob = build_problem(problem)
    bracket = build_bracket(prob, problem)
    t0 = time.perf_counter()
    if isinstance(prob, SystemProblem):
        (u, v), trace = iterate_system(
            prob, bracket, tol_fp=solver.tol_fp, max_outer=solver.max_outer, M=solver.grad_cap,
            tol=solver.tol, tol_res=solver.tol_res,
        )
        columns = {"u": u, "v": v}
        margin_grad = min(r.margin_grad for r in trace.records)
        witnesses = {
            "clamp_in_last": trace.clamp_in_last,
            "min_margin_grad": margin_grad,
        }
        passed = trace.converged and not trace.clamp_in_last and margin_grad >= 0
        brackets = {"u": bracket[0], "v": bracket[1]}
    else:
        u, trace = _iterate(prob, bracket, solver)
        columns = {"u": u}
        witnesses = {}
        if bracket is not None:
            floor = -1e-8 * float(np.max(np.abs(bracket.sub)))
            gap = float(np.min(u - bracket.sub))
            witnesses = {"min_gap": gap, "comparison_ok": gap >= floor}
            columns["sub"] = bracket.sub
        passed = trace.converged and witnesses.get("comparison_ok", True)
        brackets = {"u": bracket}
    log.info("solve finished in %.3f s", time.perf_counter() - t0)
    ratios = trace.contraction_ratios()
    summary = {
        "arity": problem.arity,
        "n": problem.n,
        "converged": trace.converged,
        "outer_iterations": trace.outer_iterations,
        "final_residual": trace.final_residual,
        "tol_res": trace.tol_res,
        "max_ratio_last5": float(np.max(ratios)) if ratios.size else None,
        **witnesses,
    }
    for name, b in brackets.items():
        summary[f"bracket_{name}"] = "none" if b is None else b.tag
        if b is not None:
            for key, val in b.params.items():
                summary[f"bracket_{name}_{key}"] = val
    if trace.note:
        summary["note"] = trace.note
    table = Table(("k", "sup_dist", "c1_dist", "residual"),
                  [(r.k, r.sup_dist, r.c1_dist, r.residual) for r in trace.records])
    return ExperimentResult(
        "solve", table, summary, passed, traces={"outer": trace}, fields={"solution": (prob.grid, columns)}
    )


# -- campaigns ---------------------------------------------------------------------------


def run_convergence(exp: ExperimentSpec, problem: ProblemConfig, solver: SolverConfig | None = None) -> ExperimentResult:
    """Manufactured-solution errors and observed orders over the grid levels.

    Passes when every level converges and the errors decrease strictly,
    or when the errors are at rounding level throughout.
    """
    solver = solver or SolverConfig()
    _require_valid(exp, problem, solver)
    _scalar_only(problem, "a convergence study")
    table = Table(("level", "h", "max_error", "observed_order", "outer_iterations", "final_residual"))
    errors, hs, converged = [], [], True
    for n in exp.levels:
        man = build_manufactured(problem, n)
        bracket = build_bracket(man.problem, problem)
        u, trace = _iterate(man.problem, bracket, solver)
        converged &= trace.converged
        if not trace.converged:
            log.warning("level %d: outer loop did not converge (%s)", n, trace.note)
        err = float(np.max(np.abs(u - man.exact)))
        h = man.problem.grid.h
        order = None
        if errors and errors[-1] > 0 and err > 0:
            order = math.log(errors[-1] / err) / math.log(hs[-1] / h)
        errors.append(err)
        hs.append(h)
        table.rows.append((n, h, err, order, trace.outer_iterations, trace.final_residual))
    orders = [o for o in table.column("observed_order") if o is not None]
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    # an exactly representable u* leaves only rounding error at every level
    exact = max(errors) <= EXACT_ERROR * (1 + float(np.max(np.abs(man.exact))))
    summary = {
        "expression": problem.manufactured,
        "levels": " ".join(str(n) for n in exp.levels),
        "last_order": orders[-1] if orders else None,
        "monotone_errors": monotone,
        "exact": exact,
        "max_error_finest": errors[-1],
        "all_converged": converged,
    }
    return ExperimentResult("convergence", table, summary, converged and (monotone or exact))


def run_uniqueness(exp: ExperimentSpec, problem: ProblemConfig, solver: SolverConfig | None = None) -> ExperimentResult:
    """Full pipeline from several initial guesses; pass iff all limits agree.

    Starts are the subsolution, the subsolution plus one, and seeded random
    fields in [sub, sub + start_width]. The verdict is asserted only at p = 2;
    for other exponents it is reported.
    """
    solver = solver or SolverConfig()
    _require_valid(exp, problem, solver)
    _scalar_only(problem, "a uniqueness study")
    prob = build_problem(problem)
    bracket = build_bracket(prob, problem)
    sub = bracket.sub if bracket is not None else np.ones(prob.grid.n_nodes)
    starts = [sub, sub + 1.0] + random_starts(sub, exp.n_starts - 2, exp.start_width, exp.seed)
    starts = starts[: exp.n_starts]
    solutions, runs = [], Table(("start", "converged", "outer_iterations", "final_residual"))
    for i, w0 in enumerate(starts):
        u, trace = _iterate(prob, bracket, solver, w0=w0)
        solutions.append(u)
        runs.rows.append((i, trace.converged, trace.outer_iterations, trace.final_residual))
    table = Table(("i", "j", "sup_distance"))
    for i, j in combinations(range(len(solutions)), 2):
        table.rows.append((i, j, float(np.max(np.abs(solutions[i] - solutions[j])))))
    max_dist = max(table.column("sup_distance"))
    all_converged = all(runs.column("converged"))
    verdict = all_converged and max_dist <= exp.unique_tol
    asserted = problem.p == 2
    summary = {
        "p": problem.p,
        "n_starts": len(starts),
        "seed": exp.seed,
        "max_distance": max_dist,
        "tolerance": exp.unique_tol,
        "all_converged": all_converged,
        "unique": verdict,
        "asserted": asserted,
    }
    return ExperimentResult(
        "uniqueness", table, summary, verdict or not asserted, extra_tables={"runs": runs},
        fields={"solution": (prob.grid, {"u": solutions[0]})},
    )


def ladder_brackets(prob: ScalarProblem, exp: ExperimentSpec) -> list[Bracket]:
    """K ordered constant pairs lo_n = start + n step, hi_n = lo_n + width."""
    out = []
    for k in range(exp.ladder_K):
        lo = exp.ladder_start + k * exp.ladder_step
        try:
            out.append(constant_pair(prob, lo, lo + exp.ladder_width))
        except BracketError as exc:
            raise BracketLadderFailed(f"rung {k} ({lo}, {lo + exp.ladder_width}): {exc}") from exc
    return out


def run_multiplicity(exp: ExperimentSpec, problem: ProblemConfig, solver: SolverConfig | None = None) -> ExperimentResult:
    """Solve inside each rung of a constant bracket ladder and certify the ordering."""
    solver = solver or SolverConfig()
    _require_valid(exp, problem, solver)
    _scalar_only(problem, "a multiplicity study")
    prob = build_problem(problem)
    rungs = ladder_brackets(prob, exp)
    table = Table(("rung", "sub", "super", "u_min", "u_max", "inside", "converged", "outer_iterations", "final_residual"))
    solutions, inside_all, converged_all = [], True, True
    for k, b in enumerate(rungs):
        u, trace = _iterate(prob, b, solver)
        tol = 1e-8 * float(np.max(np.abs(b.super)))
        inside = bool(np.all(u >= b.sub - tol) and np.all(u <= b.super + tol))
        inside_all &= inside
        converged_all &= trace.converged
        solutions.append(u)
        table.rows.append((k, b.params["c"], b.params["c_super"], float(u.min()), float(u.max()),
                           inside, trace.converged, trace.outer_iterations, trace.final_residual))
    pairs = Table(("i", "j", "ordered", "sup_distance"))
    for i, j in combinations(range(len(solutions)), 2):
        ordered = bool(np.max(solutions[i]) < np.min(solutions[j]))
        pairs.rows.append((i, j, ordered, float(np.max(np.abs(solutions[i] - solutions[j])))))
    chain = all(np.max(a) < np.min(b) for a, b in zip(solutions, solutions[1:]))
    all_ordered = all(pairs.column("ordered")) if pairs.rows else True
    min_dist = min(pairs.column("sup_distance"), default=None)
    separated = min_dist is None or min_dist >= exp.min_separation
    certified = inside_all and chain and all_ordered and separated and converged_all
    summary = {
        "K": exp.ladder_K,
        "inside_brackets": inside_all,
        "chain_ordered": chain,
        "pairwise_ordered": all_ordered,
        "min_pairwise_distance": min_dist,
        "min_separation": exp.min_separation,
        "all_converged": converged_all,
        "certified": certified,
    }
    fields = {"solutions": (prob.grid, {f"u{k}": u for k, u in enumerate(solutions)})}
    return ExperimentResult("multiplicity", table, summary, certified, fail_code=5,
                            extra_tables={"pairs": pairs}, fields=fields)


def run_compare_desingularization(
    exp: ExperimentSpec, problem: ProblemConfig, solver: SolverConfig | None = None
) -> ExperimentResult:
    """Truncation once, then the shifted reaction along the eps schedule.

    The shifted runs are warm-started from the previous shift, and each row
    reports the drift max |u_eps - u_trunc|.
    """
    solver = solver or SolverConfig()
    _require_valid(exp, problem, solver)
    _scalar_only(problem, "a desingularization comparison")
    prob = build_problem(problem)
    bracket = build_bracket(prob, problem)
    u_trunc, trace = _iterate(prob, bracket, solver)
    table = Table(("method", "eps", "outer_iters", "final_residual", "bracket_violations", "drift"))
    table.rows.append(("truncation", None, trace.outer_iterations, trace.final_residual, 0, 0.0))
    sub = bracket.sub if bracket is not None else None
    w0, drifts, converged = None, [], trace.converged
    for eps in exp.eps_schedule:
        shifted = prob.with_reaction(shift_reaction(prob.reaction, eps))
        u_eps, tr = _iterate(shifted, shifted_bracket(prob.grid, eps), solver, w0=w0, warm_start=True)
        converged &= tr.converged
        violations = 0
        if sub is not None:
            violations = int(np.sum(u_eps < sub - 1e-8 * float(np.max(np.abs(sub)))))
        drift = float(np.max(np.abs(u_eps - u_trunc)))
        drifts.append(drift)
        table.rows.append(("shift", eps, tr.outer_iterations, tr.final_residual, violations, drift))
        w0 = u_eps
    monotone = all(b < a for a, b in zip(drifts, drifts[1:]))
    identical = max(drifts) <= 1e-10
    summary = {
        "monotone_drift": monotone,
        "identical": identical,
        "final_drift": drifts[-1],
        "all_converged": converged,
    }
    return ExperimentResult("compare_desingularization", table, summary, (monotone or identical) and converged)


def default_test_functions(grid: Grid) -> list[np.ndarray]:
    """Three smooth fields vanishing on the boundary of the box."""
    unit = [(grid.coords[:, d] - a) / (b - a) for d, (a, b) in enumerate(grid.extent)]
    bases = [
        lambda t: np.sin(np.pi * t),
        lambda t: t * (1 - t),
        lambda t: np.sin(2 * np.pi * t) ** 2,
    ]
    out = []
    for fn in bases:
        phi = np.ones(grid.n_nodes)
        for t in unit:
            phi = phi * fn(t)
        phi[grid.boundary] = 0.0
        out.append(phi)
    return out


def hypothesis_audit(exp: ExperimentSpec, problem: ProblemConfig, solver: SolverConfig | None = None) -> ExperimentResult:
    """Report structural hypotheses as ok/warning/skipped rows; never fails."""
    solver = solver or SolverConfig()
    _require_valid(exp, problem, solver)
    grid = build_grid_for(problem)
    spec = build_reaction(problem)
    rows = []

    def add(check, status, value=None, detail=""):
        rows.append((check, status, value, detail))

    singular = any(t.singular for t in spec.terms)
    add("singular_limit", "ok" if spec.meta.singular_limit == singular else "warning", spec.meta.singular_limit)
    if spec.arity == "system":
        chain = check_parameter_chain(spec, problem.p, problem.q)
        add("parameter_chain", "ok" if chain else "warning", chain,
            "" if chain else "max(g1,d1) < b1-a1 < p-1 and max(g2,d2) < a2-b2 < q-1 fails")
    elif singular:
        mono = check_monotone_decreasing(spec, grid.coords)
        add("monotone_decreasing", "ok" if mono.ok else "warning", mono.ok,
            f"{len(mono.witnesses)} witnesses" if mono.witnesses else "")
        if spec.meta.growth_C is not None and spec.meta.growth_gamma is not None:
            growth = check_growth(spec, grid.coords)
            add("growth", "ok" if growth.ok else "warning", growth.ok,
                f"{len(growth.witnesses)} witnesses" if growth.witnesses else "")
            cert = hardy_sobolev_check(grid, grid.dist, spec.meta.growth_gamma, problem.p,
                                       default_test_functions(grid))
            add("hardy_sobolev", "ok" if cert.finite else "warning", cert.max_ratio)
        else:
            add("growth", "skipped", None, "no growth constants declared")
    try:
        prob = build_problem(problem)
        b = build_bracket(prob, problem)
        if b is None:
            add("bracket", "skipped", None, "no floor needed")
        else:
            tags = [x.tag for x in b] if isinstance(b, tuple) else [b.tag]
            add("bracket", "ok", " ".join(tags))
    except BracketError as exc:
        add("bracket", "warning", None, str(exc))
    table = Table(("check", "status", "value", "detail"), rows)
    warnings = sum(1 for r in rows if r[1] == "warning")
    return ExperimentResult("hypothesis_audit", table, {"warnings": warnings, "checks": len(rows)}, True)


RUNNERS = {
    "convergence": run_convergence,
    "uniqueness": run_uniqueness,
    "multiplicity": run_multiplicity,
    "compare_desingularization": run_compare_desingularization,
    "hypothesis_audit": hypothesis_audit,
}


def run_experiment(exp: ExperimentSpec, problem: ProblemConfig, solver: SolverConfig | None = None) -> ExperimentResult:
    return RUNNERS[exp.kind](exp, problem, solver)
