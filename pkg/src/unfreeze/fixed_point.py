"""Outer fixed-point loops that undo the freezing.

Scalar: w -> u = Psi(w), where u minimizes the energy of the problem frozen
at w, always started from the subsolution so that repeated solves of the
same frozen problem land on the same (smallest reachable) solution.

System: (z, w) -> componentwise solve of the frozen system, followed by a
nodewise clamp into [sub, super] that keeps iterates in the trapping set.

Outer convergence is measured in a discrete C^1 distance: the larger of the
max-norm differences of nodal values and of nodal gradients.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .bracket import Bracket, clamp
from .errors import BracketViolation, MaxItersExceeded, TrappingExit
from .frozen_solver import (
    FrozenRHS,
    ScalarProblem,
    SolveReport,
    SystemProblem,
    freeze_scalar,
    freeze_system,
    solve_frozen_scalar,
    solve_frozen_system,
    unfrozen_residual,
)
from .grid import DiscreteField, Grid, discrete_gradient
from .operators import DiscreteEnergy, OperatorSpec

log = logging.getLogger(__name__)

TOL_FP = 1e-8
MAX_OUTER = 200


@dataclass
class IterRecord:
    k: int
    sup_dist: float
    c1_dist: float
    residual: float
    grad_sup: float
    margin_sub: float | None = None
    margin_super: float | None = None
    margin_grad: float | None = None
    clamp_active: bool = False
    inner_iters: int = 0


@dataclass
class FixedPointTrace:
    records: list[IterRecord] = field(default_factory=list)
    converged: bool = False
    tol_fp: float = TOL_FP
    tol_res: float = np.nan
    final_residual: float = np.nan
    note: str = ""

    @property
    def outer_iterations(self) -> int:
        return len(self.records)

    @property
    def sup_distances(self) -> np.ndarray:
        return np.array([r.sup_dist for r in self.records])

    @property
    def c1_distances(self) -> np.ndarray:
        return np.array([r.c1_dist for r in self.records])

    def contraction_ratios(self, last: int = 5) -> np.ndarray:
        d = self.sup_distances[-(last + 1):]
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]

    @property
    def clamp_in_last(self) -> bool:
        return any(r.clamp_active for r in self.records[-2:])

    def write_csv(self, path) -> None:
        names = list(IterRecord.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names)
            for rec in self.records:
                writer.writerow([_fmt(v) for v in asdict(rec).values()])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)


def c1_distance(u, w, grid: Grid) -> tuple[float, float]:
    """(max |u - w|, max(max |u - w|, max |grad u - grad w|))."""
    diff = _values(u) - _values(w)
    sup = float(np.max(np.abs(diff)))
    grad = float(np.max(np.abs(discrete_gradient(diff, grid))))
    return sup, max(sup, grad)


def iterate_scalar(
    problem: ScalarProblem,
    bracket: Bracket | None,
    w0=None,
    tol_fp: float = TOL_FP,
    max_outer: int = MAX_OUTER,
    tol: float = 1e-10,
    tol_res: float | None = None,
    grad_cap: float | None = None,
    warm_start: bool = False,
    max_iter: int = 500,
    max_backtracks: int = 60,
) -> tuple[np.ndarray, FixedPointTrace]:
    """Picard iteration w_{k+1} = Psi(w_k) on the frozen scalar problem.

    Returns the last iterate and its trace; ``trace.converged`` is set only if
    the C^1 distance reached ``tol_fp`` and the unfrozen residual is within
    ``tol_res`` (default 1e-6 (1 + max |h|)).
    """
    grid = problem.grid
    if w0 is None:
        w0 = bracket.sub if bracket is not None else np.ones(grid.n_nodes)
    w = _values(w0).copy()
    trace = FixedPointTrace(tol_fp=tol_fp)
    free = DiscreteEnergy(grid, problem.operator).free
    u = w
    for k in range(1, max_outer + 1):
        rhs = freeze_scalar(problem, w, bracket)
        init = w if (warm_start or bracket is None) else bracket.sub
        rep = solve_frozen_scalar(problem.operator, rhs, bracket, init, tol, max_iter, max_backtracks)
        if not rep.converged:
            raise MaxItersExceeded(f"outer iteration {k}: frozen solve stopped at residual {rep.residual:.3e}")
        u = rep.solution
        sup, c1 = c1_distance(u, w, grid)
        res = float(np.max(np.abs(unfrozen_residual(problem, u)[free])))
        grad_sup = float(np.max(np.abs(discrete_gradient(u, grid))))
        rec = IterRecord(
            k=k,
            sup_dist=sup,
            c1_dist=c1,
            residual=res,
            grad_sup=grad_sup,
            margin_sub=rep.min_gap,
            margin_super=float(np.min(bracket.super - u)) if bracket is not None and bracket.super is not None else None,
            margin_grad=grad_cap - grad_sup if grad_cap is not None else None,
            inner_iters=rep.iterations,
        )
        trace.records.append(rec)
        log.info("outer %d: c1 distance %.3e, unfrozen residual %.3e", k, c1, res)
        if not rep.bracket_ok:
            trace.note = "comparison u >= sub failed"
            exc = BracketViolation(f"outer iteration {k}: solution falls below the subsolution by {-rep.min_gap:.3e}")
            exc.trace = trace
            raise exc
        w = u
        if c1 <= tol_fp:
            break

    rhs_sup = freeze_scalar(problem, u).sup(u)
    trace.tol_res = 1e-6 * (1 + rhs_sup) if tol_res is None else tol_res
    trace.final_residual = trace.records[-1].residual
    distance_ok = trace.records[-1].c1_dist <= tol_fp
    trace.converged = distance_ok and trace.final_residual <= trace.tol_res
    if distance_ok and not trace.converged:
        trace.note = "fixed point reached but the unfrozen residual exceeds tol_res"
    elif not distance_ok:
        trace.note = f"no convergence after {max_outer} outer iterations"
    return u, trace


def system_residual(problem: SystemProblem, u, v) -> float:
    """Max strong residual of the unfrozen system at (u, v)."""
    rhs_u, rhs_v = freeze_system(problem, (u, v), (u, v))
    out = 0.0
    for op, rhs, sol in ((problem.operator_u, rhs_u, u), (problem.operator_v, rhs_v, v)):
        energy = DiscreteEnergy(problem.grid, op, rhs)
        out = max(out, float(np.max(np.abs(energy.residual(sol)))))
    return out


def iterate_system(
    problem: SystemProblem,
    brackets: tuple[Bracket, Bracket],
    z0=None,
    tol_fp: float = TOL_FP,
    max_outer: int = MAX_OUTER,
    M: float = 10.0,
    tol: float = 1e-10,
    tol_res: float | None = None,
    max_exits: int = 3,
) -> tuple[tuple[np.ndarray, np.ndarray], FixedPointTrace]:
    """Unfreeze (z1, z2) and (w1, w2) together, clamping into the brackets.

    Raises TrappingExit when the gradient cap ``M`` is exceeded at
    ``max_exits`` consecutive iterates.
    """
    grid = problem.grid
    bu, bv = brackets
    if z0 is None:
        z0 = (bu.sub, bv.sub)
    z = tuple(_values(c).copy() for c in z0)
    trace = FixedPointTrace(tol_fp=tol_fp)
    specs = (problem.operator_u, problem.operator_v)
    exceed = 0
    for k in range(1, max_outer + 1):
        rhs = freeze_system(problem, z, z)
        ru, rv = solve_frozen_system(specs, rhs, brackets, inits=z, tol=tol)
        for rep in (ru, rv):
            if not rep.converged:
                raise MaxItersExceeded(f"outer iteration {k}: frozen solve stopped at residual {rep.residual:.3e}")
        raw = (ru.solution, rv.solution)
        new = (clamp(raw[0], bu), clamp(raw[1], bv))
        clamp_active = any(bool(np.any(n != r)) for n, r in zip(new, raw))
        dists = [c1_distance(n, o, grid) for n, o in zip(new, z)]
        sup = max(d[0] for d in dists)
        c1 = max(d[1] for d in dists)
        grad_sup = max(float(np.max(np.abs(discrete_gradient(c, grid)))) for c in new)
        res = system_residual(problem, *new)
        rec = IterRecord(
            k=k,
            sup_dist=sup,
            c1_dist=c1,
            residual=res,
            grad_sup=grad_sup,
            margin_sub=min(float(np.min(new[0] - bu.sub)), float(np.min(new[1] - bv.sub))),
            margin_super=min(float(np.min(bu.super - new[0])), float(np.min(bv.super - new[1]))),
            margin_grad=M - grad_sup,
            clamp_active=clamp_active,
            inner_iters=ru.iterations + rv.iterations,
        )
        trace.records.append(rec)
        log.info("system outer %d: c1 distance %.3e, residual %.3e, clamp %s", k, c1, res, clamp_active)
        exceed = exceed + 1 if grad_sup > M else 0
        if exceed >= max_exits:
            trace.note = "gradient cap exceeded"
            raise TrappingExit(f"gradient sup-norm exceeded M={M} at {max_exits} consecutive iterates", trace)
        z = new
        if c1 <= tol_fp:
            break

    u, v = z
    rhs_sup = max(r.sup(c) for r, c in zip(freeze_system(problem, z, z), z))
    trace.tol_res = 1e-6 * (1 + rhs_sup) if tol_res is None else tol_res
    trace.final_residual = trace.records[-1].residual
    distance_ok = trace.records[-1].c1_dist <= tol_fp
    trace.converged = distance_ok and trace.final_residual <= trace.tol_res
    if trace.converged and trace.clamp_in_last:
        trace.note = "clamping active at convergence: spurious fixed point"
        trace.converged = False
    elif not distance_ok:
        trace.note = f"no convergence after {max_outer} outer iterations"
    return (u, v), trace


# -- a priori gradient bound ---------------------------------------------------------


@dataclass
class GradientBound:
    margin: float
    grad_sup: float
    rhs_sup: float
    ratios: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)

    @property
    def probe_ok(self) -> bool:
        return all(self.ratios[t] <= self.bounds[t] for t in self.ratios)

    @property
    def ok(self) -> bool:
        return self.margin >= -1e-10 and self.probe_ok


def _grad_sup(u, grid) -> float:
    return float(np.max(np.abs(discrete_gradient(u, grid))))


def calibrate_gradient_constant(grid: Grid, spec: OperatorSpec, tol: float = 1e-10, safety: float = 2.0) -> float:
    """C with |grad u| <= C |f|^(1/(p-1)), from one pilot solve with a smooth bump."""
    bump = np.ones(grid.n_nodes)
    for d, (a, b) in enumerate(grid.extent):
        bump *= np.cos(np.pi * (grid.coords[:, d] - a) / (b - a))
    source = 1.0 + bump
    rhs = FrozenRHS(grid, source)
    rep = solve_frozen_scalar(spec, rhs, None, np.ones(grid.n_nodes), tol)
    return safety * _grad_sup(rep.solution, grid) / float(np.max(np.abs(source))) ** (1 / (spec.p - 1))


def gradient_bound_check(
    spec: OperatorSpec,
    rhs: FrozenRHS,
    report: SolveReport,
    C_cal: float,
    t_values=(2.0, 4.0),
    tol: float = 1e-10,
    bracket: Bracket | None = None,
) -> GradientBound:
    """Margin C_cal |rhs|^(1/(p-1)) - |grad u| plus the rhs scaling probe.

    The probe re-solves with rhs scaled by t and requires
    |grad u_t| <= 1.25 t^(1/(p-1)) |grad u_1|.
    """
    grid = rhs.grid
    u = report.solution
    e = 1.0 / (spec.p - 1)
    rhs_sup = rhs.sup(u)
    g1 = _grad_sup(u, grid)
    out = GradientBound(margin=C_cal * rhs_sup**e - g1, grad_sup=g1, rhs_sup=rhs_sup)
    for t in t_values:
        rep_t = solve_frozen_scalar(spec, rhs.scaled(t), bracket, None, tol)
        gt = _grad_sup(rep_t.solution, grid)
        out.ratios[t] = gt / g1 if g1 > 0 else 0.0
        out.bounds[t] = 1.25 * t**e
    return out


# -- minimal selection ----------------------------------------------------------------


@dataclass
class SelectionProbe:
    candidates: list
    min_candidate: np.ndarray
    incomparable: bool
    n_solves: int


def minimal_selection_probe(
    problem: ScalarProblem,
    bracket: Bracket,
    w,
    n_starts: int = 3,
    seed: int = 0,
    starts=None,
    tol: float = 1e-10,
    dedup: float = 1e-6,
) -> SelectionProbe:
    """Approximate min S(w) by solving the frozen problem from several starts."""
    grid = problem.grid
    sub = bracket.sub
    if starts is None:
        rng = np.random.default_rng(seed)
        width = bracket.super - sub if bracket.super is not None else np.full(grid.n_nodes, 2.0)
        starts = [sub, sub + 1.0]
        while len(starts) < n_starts:
            starts.append(sub + rng.uniform(0.0, 1.0, grid.n_nodes) * width)
        starts = starts[:n_starts]
    rhs = freeze_scalar(problem, w, bracket)
    candidates: list[np.ndarray] = []
    for s0 in starts:
        rep = solve_frozen_scalar(problem.operator, rhs, bracket, _values(s0), tol)
        u = rep.solution
        if all(np.max(np.abs(u - c)) > dedup for c in candidates):
            candidates.append(u)
    idx = int(np.argmin([np.sum(c) for c in candidates]))
    best = candidates[idx]
    incomparable = any(np.any(best > c + dedup) for c in candidates)
    return SelectionProbe(candidates, best, incomparable, len(starts))
