"""Frozen auxiliary problems and their solution by energy minimization.

Freezing a scalar problem at ``w`` replaces every gradient argument of the
reaction by the nodal gradient of ``w``; what remains depends on u only
through s, so the problem is the Euler-Lagrange equation of
``operators.DiscreteEnergy``. The reaction is composed with the truncation
``clip(u, sub, super)`` so the energy stays finite below the subsolution.

Freezing a system at ``(z1, z2, w1, w2)`` makes both right-hand sides
independent of the unknowns; the two equations decouple into Neumann
problems with a unit potential.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LineSearchStall, NonFiniteEnergy, ValidationError
from .grid import DiscreteField, Grid, discrete_gradient
from .operators import DiscreteEnergy, OperatorSpec
from .reactions import ReactionSpec, Term, eval_reaction

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ScalarProblem:
    grid: Grid
    operator: OperatorSpec
    reaction: ReactionSpec
    boundary_data: np.ndarray | None = None

    def __post_init__(self):
        if self.reaction.arity != "scalar":
            raise ValidationError("scalar problems need a scalar reaction")

    def with_reaction(self, reaction: ReactionSpec) -> "ScalarProblem":
        return replace(self, reaction=reaction)


@dataclass(frozen=True, eq=False)
class SystemProblem:
    grid: Grid
    operator_u: OperatorSpec
    operator_v: OperatorSpec
    reaction: ReactionSpec
    grad_floor: float = 0.0

    def __post_init__(self):
        problems = []
        if self.reaction.arity != "system":
            problems.append("system problems need a system reaction")
        for name, op in (("u", self.operator_u), ("v", self.operator_v)):
            if op.bc != "neumann" or op.lam != 1.0 or op.kind != "p":
                problems.append(f"operator for {name} must be a pure Neumann operator with unit potential")
        if problems:
            raise ValidationError(problems)

    @classmethod
    def neumann(cls, grid, p, q, reaction, grad_floor=0.0) -> "SystemProblem":
        return cls(
            grid,
            OperatorSpec.neumann_with_potential(p),
            OperatorSpec.neumann_with_potential(q),
            reaction,
            grad_floor,
        )


@dataclass(eq=False)
class FrozenRHS:
    """Right-hand side with all gradient (and, for systems, value) arguments fixed.

    ``value(u) = source + sum_k mult_k * phi_k(T(u))`` where ``T`` clips u to
    ``[floor, ceil]`` and ``phi_k`` is the s-factor of term k.
    """

    grid: Grid
    source: np.ndarray
    s_terms: tuple[tuple[Term, np.ndarray], ...] = ()
    floor: np.ndarray | None = None
    ceil: np.ndarray | None = None
    boundary_data: np.ndarray | None = None
    active: np.ndarray | None = None
    frozen: dict = field(default_factory=dict)

    def _mask(self) -> np.ndarray:
        if self.active is None:
            return np.ones(self.grid.n_nodes, dtype=bool)
        return self.active

    def truncate(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.floor is not None:
            u = np.maximum(u, self.floor)
        if self.ceil is not None:
            u = np.minimum(u, self.ceil)
        return u

    def value(self, u) -> np.ndarray:
        mask = self._mask()
        out = np.where(mask, self.source, 0.0)
        if self.s_terms:
            tu = self.truncate(u)[mask]
            for term, mult in self.s_terms:
                out[mask] += mult[mask] * term.s_factor(tu)
        return out

    def derivative(self, u) -> np.ndarray:
        mask = self._mask()
        out = np.zeros(self.grid.n_nodes)
        if not self.s_terms:
            return out
        u = np.asarray(u, dtype=float)
        inside = mask.copy()
        if self.floor is not None:
            inside &= u > self.floor
        if self.ceil is not None:
            inside &= u < self.ceil
        for term, mult in self.s_terms:
            out[inside] += mult[inside] * term.s_factor_derivative(u[inside])
        return out

    def primitive(self, u) -> np.ndarray:
        """H(x, u) = integral of the truncated right-hand side from the floor to u."""
        mask = self._mask()
        u = np.asarray(u, dtype=float)
        out = np.where(mask, self.source * u, 0.0)
        if not self.s_terms:
            return out
        um = u[mask]
        lo = self.floor[mask] if self.floor is not None else np.ones_like(um)
        hi = self.ceil[mask] if self.ceil is not None else None
        tu = np.maximum(um, lo) if self.floor is not None else um
        if hi is not None:
            tu = np.minimum(tu, hi)
        below = np.minimum(um - lo, 0.0) if self.floor is not None else 0.0
        above = np.maximum(um - hi, 0.0) if hi is not None else 0.0
        for term, mult in self.s_terms:
            part = term.s_integral(lo, tu)
            if self.floor is not None:
                part = part + term.s_factor(lo) * below
            if hi is not None:
                part = part + term.s_factor(hi) * above
            out[mask] += mult[mask] * part
        return out

    def sup(self, u) -> float:
        return float(np.max(np.abs(self.value(u)), initial=0.0))

    def scaled(self, factor: float) -> "FrozenRHS":
        return replace(
            self,
            source=self.source * factor,
            s_terms=tuple((t, m * factor) for t, m in self.s_terms),
        )

    def without_truncation(self) -> "FrozenRHS":
        return replace(self, floor=None, ceil=None)


def _active_mask(grid: Grid, spec: OperatorSpec) -> np.ndarray:
    mask = np.ones(grid.n_nodes, dtype=bool)
    if spec.bc == "dirichlet":
        mask[grid.boundary] = False
    return mask


def _floor_gradient(grad: np.ndarray, floor: float) -> np.ndarray:
    if floor <= 0:
        return grad
    grad = grad.copy()
    grad[np.linalg.norm(grad, axis=1) < floor] = 0.0
    return grad


def freeze_scalar(problem: ScalarProblem, w, bracket=None, truncate: bool = True) -> FrozenRHS:
    """Freeze the gradient argument of the reaction at ``w``."""
    grid = problem.grid
    w = w.values if isinstance(w, DiscreteField) else np.asarray(w, dtype=float)
    grad_w = discrete_gradient(w, grid)
    active = _active_mask(grid, problem.operator)
    source = np.zeros(grid.n_nodes)
    s_terms = []
    for term in problem.reaction.terms:
        mult = term.frozen_factor(grid.coords, grad_w)
        if term.depends_on_s:
            s_terms.append((term, mult))
        else:
            source += mult
    floor = ceil = None
    if bracket is not None and truncate:
        floor = bracket.sub
        ceil = bracket.super
    return FrozenRHS(
        grid=grid,
        source=source,
        s_terms=tuple(s_terms),
        floor=floor,
        ceil=ceil,
        boundary_data=problem.boundary_data,
        active=active,
        frozen={"w": w, "grad_w": grad_w},
    )


def freeze_system(problem: SystemProblem, z, w) -> tuple[FrozenRHS, FrozenRHS]:
    """Right-hand sides f(x, z1, z2, grad w1, grad w2) + z1^(p-1) and g(...) + z2^(q-1)."""
    grid = problem.grid
    z1, z2 = (np.asarray(c, dtype=float) for c in z)
    w1, w2 = (np.asarray(c, dtype=float) for c in w)
    g1 = _floor_gradient(discrete_gradient(w1, grid), problem.grad_floor)
    g2 = _floor_gradient(discrete_gradient(w2, grid), problem.grad_floor)
    f, g = eval_reaction(problem.reaction, grid.coords, z1, g1, z2, g2)
    p, q = problem.operator_u.p, problem.operator_v.p
    frozen = {"z1": z1, "z2": z2, "w1": w1, "w2": w2}
    rhs_u = FrozenRHS(grid, f + z1 ** (p - 1), frozen=frozen)
    rhs_v = FrozenRHS(grid, g + z2 ** (q - 1), frozen=frozen)
    return rhs_u, rhs_v


@dataclass
class SolveReport:
    solution: np.ndarray
    residual: float
    energies: list[float]
    iterations: int
    converged: bool
    backtracks: int = 0
    regularized_steps: int = 0
    stagnated: bool = False
    min_gap: float | None = None
    bracket_ok: bool = True
    residual_floor: float = 0.0

    @property
    def energy_decrease_ok(self) -> bool:
        e = np.asarray(self.energies)
        return bool(np.all(np.diff(e) <= 1e-13 * (1 + np.abs(e[:-1]))))


def _newton_direction(H, g, wts):
    try:
        d = spla.splu(H).solve(-g)
        if np.all(np.isfinite(d)) and g @ d < 0:
            return d, False
    except RuntimeError:
        pass
    scale = max(1.0, float(np.max(np.abs(H.diagonal()) / wts)))
    mu = 1e-8 * scale
    W = sp.diags(wts, format="csc")
    for _ in range(16):
        try:
            d = spla.splu((H + mu * W).tocsc()).solve(-g)
            if np.all(np.isfinite(d)) and g @ d < 0:
                return d, True
        except RuntimeError:
            pass
        mu *= 10
    return -g / wts, True


# Safety multiple applied to the rounding estimate in residual_floor.
FLOOR_FACTOR = 4.0


def residual_floor(H, x, wts, scale=None) -> float:
    """Smallest residual attainable in floating point near ``x``.

    Two effects add up: an ulp change in ``x`` moves the gradient by about
    ``eps |H| |x|``, and summing the gradient contributions loses about
    ``eps * scale``, where ``scale`` holds their absolute values.
    """
    level = abs(H) @ np.abs(x)
    if scale is not None:
        level = level + np.asarray(scale)
    return FLOOR_FACTOR * np.finfo(float).eps * float(np.max(level / wts, initial=0.0))


def _stagnated(x, res, energies, it, tol, H, scale, wts, backtracks, regularized) -> SolveReport:
    floor = residual_floor(H, x, wts, scale(x) if scale is not None else None)
    rep = SolveReport(x, res, energies, it, res <= max(tol, floor), backtracks, regularized, stagnated=True)
    rep.residual_floor = floor
    return rep


def minimize_energy(
    fun,
    grad,
    hess,
    x0,
    tol: float = 1e-10,
    weights=None,
    max_iter: int = 500,
    max_backtracks: int = 60,
    c1: float = 1e-4,
    scale=None,
) -> SolveReport:
    """Damped Newton with Armijo backtracking on ``fun``.

    Convergence is measured on ``grad / weights`` in the max norm. A step is
    accepted only if the energy decreases by the Armijo amount. When steps
    shrink to roundoff the solve stops with ``stagnated`` set; it counts as
    converged if the residual is within ``tol`` or within the rounding floor
    implied by ``scale(x)``, the absolute gradient contributions.
    """
    x = np.array(x0, dtype=float)
    wts = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)

    def safe(fx):
        try:
            return fun(fx)
        except NonFiniteEnergy:
            return np.inf

    f = fun(x)
    g = grad(x)
    energies = [f]
    res = float(np.max(np.abs(g / wts), initial=0.0))
    backtracks = regularized = 0
    for it in range(max_iter):
        if res <= tol:
            return SolveReport(x, res, energies, it, True, backtracks, regularized)
        H = hess(x)
        d, reg = _newton_direction(H, g, wts)
        regularized += reg
        slope = g @ d
        noise = 1e-13 * (1 + abs(f))
        tiny = np.max(np.abs(d)) <= 1e-13 * (1 + np.max(np.abs(x)))
        if tiny or -slope <= noise:
            # the step or its predicted decrease is below resolution: judge
            # the full Newton step by the residual instead of the energy
            xn = x + d
            fn = safe(xn)
            if np.isfinite(fn) and fn <= f + noise:
                gn = grad(xn)
                rn = float(np.max(np.abs(gn / wts), initial=0.0))
                if rn < res:
                    x, f, g, res = xn, fn, gn, rn
                    energies.append(f)
                    continue
            return _stagnated(x, res, energies, it, tol, H, scale, wts, backtracks, regularized)
        alpha = 1.0
        accepted = False
        for _ in range(max_backtracks):
            xn = x + alpha * d
            fn = safe(xn)
            if np.isfinite(fn) and fn <= f + c1 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
            backtracks += 1
        if not accepted:
            raise LineSearchStall(
                f"no energy-decreasing step after {max_backtracks} backtracks (residual {res:.3e})"
            )
        x, f = xn, fn
        g = grad(x)
        res = float(np.max(np.abs(g / wts), initial=0.0))
        energies.append(f)
    converged = res <= tol
    return SolveReport(x, res, energies, max_iter, converged, backtracks, regularized)


def solve_frozen_scalar(
    spec: OperatorSpec,
    rhs: FrozenRHS,
    bracket=None,
    init=None,
    tol: float = 1e-10,
    max_iter: int = 500,
    max_backtracks: int = 60,
    check_comparison: bool = True,
) -> SolveReport:
    """Minimize the discrete energy of a frozen, truncated problem.

    The initial iterate defaults to the subsolution. After the solve the
    comparison ``u >= sub`` is checked to ``1e-8 * max|sub|``.
    """
    grid = rhs.grid
    energy = DiscreteEnergy(grid, spec, rhs)
    if init is None:
        init = bracket.sub if bracket is not None else np.ones(grid.n_nodes)
    init = init.values if isinstance(init, DiscreteField) else np.asarray(init, dtype=float)
    free = energy.free

    rep = minimize_energy(
        lambda x: energy.value(energy.expand(x)),
        lambda x: energy.gradient(energy.expand(x))[free],
        lambda x: energy.hessian(energy.expand(x)),
        init[free],
        tol=tol,
        weights=grid.node_weights[free],
        max_iter=max_iter,
        max_backtracks=max_backtracks,
        scale=lambda x: energy.gradient_scale(energy.expand(x))[free],
    )
    u = energy.expand(rep.solution)
    rep.solution = u
    if bracket is not None and check_comparison:
        sub = np.asarray(bracket.sub)
        rep.min_gap = float(np.min(u - sub))
        tol_cmp = 1e-8 * float(np.max(np.abs(sub)))
        rep.bracket_ok = rep.min_gap >= -tol_cmp
        if not rep.bracket_ok:
            log.warning("frozen solution dips below the subsolution by %.3e", -rep.min_gap)
    log.debug("frozen solve: %d Newton steps, residual %.3e", rep.iterations, rep.residual)
    return rep


def solve_frozen_system(
    specs: tuple[OperatorSpec, OperatorSpec],
    rhs: tuple[FrozenRHS, FrozenRHS],
    brackets=(None, None),
    inits=(None, None),
    tol: float = 1e-10,
    order=(0, 1),
    **kwargs,
) -> tuple[SolveReport, SolveReport]:
    """Solve both decoupled components; ``order`` only changes evaluation order."""
    out: list[SolveReport | None] = [None, None]
    for i in order:
        init = inits[i]
        if init is None:
            init = brackets[i].sub if brackets[i] is not None else np.ones(rhs[i].grid.n_nodes)
        out[i] = solve_frozen_scalar(specs[i], rhs[i], brackets[i], init, tol, check_comparison=False, **kwargs)
        if brackets[i] is not None:
            out[i].min_gap = float(np.min(out[i].solution - brackets[i].sub))
    return out[0], out[1]


def unfrozen_residual(problem: ScalarProblem, u) -> np.ndarray:
    """Strong residual of the original problem at u (no truncation, gradient taken from u)."""
    u = u.values if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)
    rhs = freeze_scalar(problem, u, bracket=None)
    energy = DiscreteEnergy(problem.grid, problem.operator, rhs)
    with np.errstate(all="ignore"):
        return energy.residual(u)
