"""Sub- and supersolutions, truncation, the epsilon shift, and the Hardy-Sobolev certificate.

A candidate subsolution is accepted only after a discrete residual check:
the strong residual of the frozen problem (gradient arguments set to zero)
must be <= tol_sub at every free node, tol_sub = 1e-8 * max(1, |rhs|).
Supersolutions are checked with the opposite sign.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteEnergy, NotASubsolution, NotASupersolution, ValidationError
from .frozen_solver import ScalarProblem, SystemProblem, freeze_scalar
from .grid import DiscreteField, Grid
from .operators import DiscreteEnergy
from .reactions import ReactionSpec, eval_reaction

log = logging.getLogger(__name__)

SUB_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Bracket:
    sub: np.ndarray
    super: np.ndarray | None = None
    tag: str = "constant"
    params: dict = field(default_factory=dict)
    grid: Grid | None = None

    def __post_init__(self):
        sub = np.asarray(self.sub, dtype=float)
        object.__setattr__(self, "sub", sub)
        problems = []
        if self.tag != "shifted" and self.grid is not None:
            interior = self.grid.interior
            if interior.size and not np.min(sub[interior]) > 0:
                problems.append("subsolution must be positive at interior nodes")
        if self.super is not None:
            sup = np.asarray(self.super, dtype=float)
            object.__setattr__(self, "super", sup)
            if np.any(sub > sup) or not np.any(sub < sup):
                problems.append("need sub <= super everywhere with strict inequality somewhere")
        if problems:
            raise ValidationError(problems)

    def sub_field(self) -> DiscreteField:
        return DiscreteField(self.grid, self.sub)

    def with_super(self, sup) -> "Bracket":
        return replace(self, super=np.asarray(sup, dtype=float))


def truncate(u, bracket: Bracket) -> np.ndarray:
    """T(u) = max(u, sub), nodewise."""
    u = u.values if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)
    return np.maximum(u, bracket.sub)


def clamp(u, bracket: Bracket) -> np.ndarray:
    """Project nodewise into [sub, super] (the trapping projection)."""
    u = np.maximum(np.asarray(u, dtype=float), bracket.sub)
    if bracket.super is not None:
        u = np.minimum(u, bracket.super)
    return u


def subsolution_residual(problem: ScalarProblem, values, w=None) -> np.ndarray:
    """Strong residual of the frozen problem at ``values``; <= 0 means subsolution.

    The gradient argument is frozen at ``w`` (default: zero gradient).
    """
    residual, _, _ = _residual_and_tol(problem, values, w)
    return residual


def _residual_and_tol(problem, values, w):
    grid = problem.grid
    w = np.zeros(grid.n_nodes) if w is None else w
    rhs = freeze_scalar(problem, w, bracket=None)
    energy = DiscreteEnergy(grid, problem.operator, rhs)
    with np.errstate(all="ignore"):
        res = energy.residual(values)
        scale = max(1.0, float(np.max(np.abs(rhs.value(values)[energy.free]))))
    return res, SUB_TOL * scale, energy.free


def _check_sub(problem, values, w=None):
    try:
        res, tol, free = _residual_and_tol(problem, values, w)
    except NonFiniteEnergy:
        return False, None, np.inf
    worst = free[np.argmax(res[free])]
    return bool(res[worst] <= tol), int(worst), float(res[worst])


def _check_super(problem, values, w=None):
    try:
        res, tol, free = _residual_and_tol(problem, values, w)
    except NonFiniteEnergy:
        return False, None, -np.inf
    worst = free[np.argmin(res[free])]
    return bool(res[worst] >= -tol), int(worst), float(res[worst])


def constant_subsolution(problem: ScalarProblem, c: float, w=None) -> Bracket:
    if problem.operator.bc == "dirichlet":
        raise ValidationError("constant subsolutions are incompatible with a zero Dirichlet trace")
    if not c > 0:
        raise ValidationError(f"constant level must be positive, got {c}")
    vals = np.full(problem.grid.n_nodes, float(c))
    ok, node, margin = _check_sub(problem, vals, w)
    if not ok:
        raise NotASubsolution(f"constant {c} is not a subsolution (node {node}, residual {margin:.3e})", node, margin)
    return Bracket(vals, tag="constant", params={"c": float(c)}, grid=problem.grid)


def find_constant_subsolution(problem: ScalarProblem, c0: float = 1.0, max_halvings: int = 20, w=None) -> Bracket:
    c = float(c0)
    last = None
    for _ in range(max_halvings + 1):
        try:
            return constant_subsolution(problem, c, w)
        except NotASubsolution as exc:
            last = exc
            c /= 2
    raise NotASubsolution(f"no constant subsolution after {max_halvings} halvings: {last}", last.node, last.margin)


def distance_subsolution(problem: ScalarProblem, k: float, max_halvings: int = 20, w=None) -> Bracket:
    """sub = k dist(x, boundary), halving k until the residual check passes."""
    grid = problem.grid
    bc = problem.operator.bc
    if bc not in ("dirichlet", "robin"):
        raise ValidationError("distance subsolutions need a Dirichlet or Robin problem")
    if bc == "robin" and any(t.singular for t in problem.reaction.terms):
        raise NotASubsolution(
            "k*dist vanishes on the boundary, where a singular Robin reaction is unbounded; "
            "use a constant subsolution instead"
        )
    k = float(k)
    node = margin = None
    for _ in range(max_halvings + 1):
        vals = k * grid.dist
        ok, node, margin = _check_sub(problem, vals, w)
        if ok:
            return Bracket(vals, tag="distance_based", params={"k": k}, grid=grid)
        k /= 2
    raise NotASubsolution(f"k*dist rejected after {max_halvings} halvings (node {node}, residual {margin})", node, margin)


def constant_supersolution(problem: ScalarProblem, start: float = 1.0, max_doublings: int = 40, w=None) -> np.ndarray:
    c = float(start)
    for _ in range(max_doublings + 1):
        vals = np.full(problem.grid.n_nodes, c)
        ok, node, margin = _check_super(problem, vals, w)
        if ok:
            return vals
        c *= 2
    raise NotASupersolution(f"no constant supersolution up to {c / 2}", node, margin)


def constant_pair(problem: ScalarProblem, lo: float, hi: float, w=None) -> Bracket:
    """Check that constants lo < hi form an ordered sub/super pair."""
    grid = problem.grid
    sub = np.full(grid.n_nodes, float(lo))
    sup = np.full(grid.n_nodes, float(hi))
    ok, node, margin = _check_sub(problem, sub, w)
    if not ok:
        raise NotASubsolution(f"{lo} is not a subsolution (residual {margin:.3e})", node, margin)
    ok, node, margin = _check_super(problem, sup, w)
    if not ok:
        raise NotASupersolution(f"{hi} is not a supersolution (residual {margin:.3e})", node, margin)
    return Bracket(sub, sup, tag="constant", params={"c": float(lo), "c_super": float(hi)}, grid=grid)


# -- systems -------------------------------------------------------------------


def _system_sign(problem: SystemProblem, component: int, level: float, others) -> np.ndarray:
    """Sign-relevant reaction values for a constant ``level`` of one component."""
    grid = problem.grid
    n = grid.n_nodes
    out = []
    for other in others:
        s, t = (level, other) if component == 0 else (other, level)
        f, g = eval_reaction(problem.reaction, grid.coords, np.full(n, s), None, np.full(n, t), None)
        out.append(f if component == 0 else g)
    return np.concatenate(out)


def system_brackets(
    problem: SystemProblem,
    sub0: float = 1.0,
    super0: float = 1.0,
    max_halvings: int = 20,
    max_doublings: int = 40,
    n_samples: int = 9,
) -> tuple[Bracket, Bracket]:
    """Constant sub/super pairs for both components of the frozen system.

    For a constant pair, the frozen residual reduces to -f (resp. -g) at zero
    gradients, so subsolutions need f >= 0 and supersolutions f <= 0. The
    other component is first held at 1, then the result is re-verified over
    samples spanning the other component's bracket.
    """
    levels = []
    for comp in (0, 1):
        c = float(sub0)
        for _ in range(max_halvings + 1):
            if np.all(_system_sign(problem, comp, c, [1.0]) >= 0):
                break
            c /= 2
        else:
            raise NotASubsolution(f"no constant subsolution for component {comp}")
        m = float(super0)
        for _ in range(max_doublings + 1):
            if m > c and np.all(_system_sign(problem, comp, m, [1.0]) <= 0):
                break
            m *= 2
        else:
            raise NotASupersolution(f"no constant supersolution for component {comp}")
        levels.append((c, m))

    for comp in (0, 1):
        c, m = levels[comp]
        lo, hi = levels[1 - comp]
        others = np.linspace(lo, hi, n_samples)
        if np.any(_system_sign(problem, comp, c, others) < 0):
            raise NotASubsolution(f"component {comp}: {c} fails over the other component's bracket")
        if np.any(_system_sign(problem, comp, m, others) > 0):
            raise NotASupersolution(f"component {comp}: {m} fails over the other component's bracket")

    n = problem.grid.n_nodes
    return tuple(
        Bracket(np.full(n, c), np.full(n, m), tag="constant", params={"c": c, "c_super": m}, grid=problem.grid)
        for c, m in levels
    )


# -- epsilon shift ---------------------------------------------------------------


def shift_reaction(spec: ReactionSpec, eps: float) -> ReactionSpec:
    """Replace g(x, s) by g(x, s + eps) in every singular term."""
    if not eps > 0:
        raise ValidationError(f"shift must be positive, got {eps}")
    terms = tuple(replace(t, shift=float(eps)) if t.singular else t for t in spec.terms)
    return replace(spec, terms=terms)


def shifted_bracket(grid: Grid, eps: float) -> Bracket:
    """Zero floor used with a shifted reaction; the shift keeps g finite at 0."""
    return Bracket(np.zeros(grid.n_nodes), tag="shifted", params={"eps": float(eps)}, grid=grid)


# -- Hardy-Sobolev -----------------------------------------------------------------


@dataclass
class HardySobolevCertificate:
    ratios: list[float]
    max_ratio: float
    finite: bool
    skipped: list[int] = field(default_factory=list)
    note: str = ""


def hardy_sobolev_ratio(grid: Grid, u, gamma: float, p: float, phi) -> float:
    """int u^-gamma |phi| / int |grad phi|^p with lumped quadrature."""
    u = np.asarray(u, dtype=float)
    phi = np.asarray(phi, dtype=float)
    inside = grid.interior
    num = float(grid.node_weights[inside] @ (u[inside] ** (-gamma) * np.abs(phi[inside])))
    grads = grid.element_gradients(phi)
    den = float(grid.elem_volumes @ np.sum(grads * grads, axis=1) ** (p / 2))
    return num / den


def hardy_sobolev_check(grid: Grid, u, gamma: float, p: float, phis, k: float | None = None) -> HardySobolevCertificate:
    u = u.values if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)
    if not 0 < gamma < 1:
        raise ValidationError(f"gamma must lie in (0, 1), got {gamma}")
    inside = grid.interior
    if k is None:
        k = float(np.min(u[inside] / grid.dist[inside]))
    if not k > 0 or np.any(u < k * grid.dist - 1e-14 * (1 + np.abs(u))):
        raise ValidationError(f"u violates the lower bound u >= k dist with k = {k}")
    ratios, skipped = [], []
    for i, phi in enumerate(phis):
        phi = phi.values if isinstance(phi, DiscreteField) else np.asarray(phi, dtype=float)
        scale = float(np.max(np.abs(phi), initial=0.0))
        if scale == 0:
            skipped.append(i)
            continue
        if np.max(np.abs(phi[grid.boundary])) > 1e-12 * scale:
            raise ValidationError(f"test function {i} does not vanish on the boundary")
        ratios.append(hardy_sobolev_ratio(grid, u, gamma, p, phi))
    finite = bool(ratios) and all(np.isfinite(ratios))
    note = f"skipped zero test functions {skipped}" if skipped else ""
    return HardySobolevCertificate(ratios, max(ratios, default=float("nan")), finite, skipped, note)
