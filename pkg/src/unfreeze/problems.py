"""Declarative problem and solver settings, and builders for the solver objects.

These dataclasses are the in-memory form of a run configuration. Each one
has a ``validate`` method that returns every violated invariant as a list
of messages. The ``build_*`` functions turn validated settings into grids,
operators, reactions, problems and brackets.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bracket import (
    constant_pair,
    distance_subsolution,
    find_constant_subsolution,
    shift_reaction,
    shifted_bracket,
    system_brackets,
)
from .errors import ValidationError
from .frozen_solver import ScalarProblem, SystemProblem
from .grid import Grid, build_grid
from .manufactured import Manufactured, manufacture
from .operators import OperatorSpec
from .reactions import (
    CHAIN_PARAMS,
    ReactionSpec,
    SingularMeta,
    Term,
    h_family,
    sine_ladder,
    system_family,
)

FAMILIES = ("none", "h", "system", "sine_ladder")
BRACKET_MODES = ("auto", "none", "constant", "distance", "pair", "shifted")

# Family parameters and their defaults; strings stay strings (expressions).
FAMILY_PARAMS = {
    "none": {},
    "h": {"eta": 0.5, "a": 1.0, "convection": 1.0},
    "system": {k: None for k in CHAIN_PARAMS},
    "sine_ladder": {"perturbation": None, "amplitude": 0.01},
}


@dataclass
class ReactionConfig:
    family: str = "none"
    params: dict = field(default_factory=dict)
    terms: tuple[Term, ...] = ()
    monotone_decreasing: bool | None = None
    singular_limit: bool | None = None
    growth_C: float | None = None
    growth_gamma: float | None = None

    def validate(self) -> list[str]:
        problems = []
        if self.family not in FAMILIES:
            return [f"reaction family must be one of {FAMILIES}, got {self.family!r}"]
        allowed = FAMILY_PARAMS[self.family]
        for key in self.params:
            if key not in allowed:
                problems.append(f"unknown parameter {key!r} for reaction family {self.family!r}")
        if self.family == "system":
            missing = [k for k in CHAIN_PARAMS if self.params.get(k) is None]
            if missing:
                problems.append(f"system family needs parameters {missing}")
        if self.growth_C is not None and not self.growth_C > 0:
            problems.append(f"growth constant C must be positive (got {self.growth_C})")
        if self.growth_gamma is not None and not 0 < self.growth_gamma < 1:
            problems.append(f"growth exponent gamma must lie in (0, 1) (got {self.growth_gamma})")
        return problems

    def family_params(self) -> dict:
        out = dict(FAMILY_PARAMS[self.family])
        out.update(self.params)
        return out


@dataclass
class ProblemConfig:
    dimension: int = 1
    extent: tuple[float, ...] = (0.0, 1.0)
    n: int = 64
    arity: str = "scalar"
    kind: str = "p"
    p: float = 2.0
    q: float | None = None
    lam: float = 0.0
    beta: float = 1.0
    bc: str = "robin"
    bracket: str = "auto"
    bracket_c: float = 1.0
    bracket_k: float = 1.0
    bracket_super: float | None = None
    manufactured: str | None = None
    shift_eps: float = 1e-2
    grad_floor: float = 0.0
    reaction: ReactionConfig = field(default_factory=ReactionConfig)

    def validate(self) -> list[str]:
        problems = []
        if self.dimension not in (1, 2):
            problems.append(f"dimension must be 1 or 2, got {self.dimension}")
        elif len(self.extent) != 2 * self.dimension:
            problems.append(f"extent needs {2 * self.dimension} numbers for dimension {self.dimension}")
        else:
            for d in range(self.dimension):
                if not self.extent[2 * d] < self.extent[2 * d + 1]:
                    problems.append(f"extent along axis {d} must be increasing")
        if self.n < 2:
            problems.append(f"grid size n must be at least 2, got {self.n}")
        if self.arity not in ("scalar", "system"):
            problems.append(f"arity must be scalar or system, got {self.arity!r}")
        if self.bracket not in BRACKET_MODES:
            problems.append(f"bracket mode must be one of {BRACKET_MODES}, got {self.bracket!r}")
        if self.grad_floor < 0:
            problems.append("grad_floor must be nonnegative")
        if not self.shift_eps > 0:
            problems.append(f"shift_eps must be positive (got {self.shift_eps})")
        if self.arity == "system":
            if self.kind != "p" or self.bc != "neumann":
                problems.append("system problems use kind = p and bc = neumann")
            for name in ("p", "q"):
                val = getattr(self, name)
                if val is None or not val > 1:
                    problems.append(f"{name} must exceed 1 for a system (got {val})")
        else:
            try:
                self.operator()
            except ValidationError as exc:
                problems.extend(exc.problems)
        problems.extend(self.reaction.validate())
        if not problems:
            try:
                spec = build_reaction(self)
            except ValidationError as exc:
                problems.extend(exc.problems)
            else:
                if spec.arity != self.arity:
                    problems.append(f"reaction family {self.reaction.family!r} does not fit a {self.arity} problem")
        if self.bracket == "pair" and self.bracket_super is None:
            problems.append("bracket mode pair needs bracket_super")
        return problems

    def operator(self) -> OperatorSpec:
        return OperatorSpec(self.kind, self.p, self.q, self.lam, self.beta, self.bc)

    def with_n(self, n: int) -> "ProblemConfig":
        return replace(self, n=int(n))


@dataclass
class SolverConfig:
    tol: float = 1e-10
    tol_fp: float = 1e-8
    max_outer: int = 200
    max_iter: int = 500
    max_backtracks: int = 60
    tol_res: float | None = None
    warm_start: bool = False
    grad_cap: float = 10.0
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        for name in ("tol", "tol_fp", "grad_cap"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive (got {getattr(self, name)})")
        if self.tol_res is not None and not self.tol_res > 0:
            problems.append(f"tol_res must be positive (got {self.tol_res})")
        for name in ("max_outer", "max_iter"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be at least 1")
        if self.max_backtracks < 0:
            problems.append("max_backtracks must be nonnegative")
        if self.seed < 0:
            problems.append("seed must be nonnegative")
        return problems


# -- builders ------------------------------------------------------------------------


def build_grid_for(cfg: ProblemConfig, n: int | None = None) -> Grid:
    return build_grid(tuple(cfg.extent), cfg.n if n is None else n)


def build_reaction(cfg: ProblemConfig) -> ReactionSpec:
    rc = cfg.reaction
    fp = rc.family_params()
    if rc.family == "h":
        base = h_family(fp["eta"], cfg.p, fp["a"], fp["convection"])
    elif rc.family == "system":
        base = system_family(*(fp[k] for k in CHAIN_PARAMS))
    elif rc.family == "sine_ladder":
        base = sine_ladder(fp["perturbation"], fp["amplitude"])
    else:
        base = ReactionSpec(cfg.arity)
    # Family metadata survives unless extra terms change the singular structure.
    keep = bool(base.terms) and not any(t.singular for t in rc.terms)
    arity = base.arity if base.terms else cfg.arity
    spec = ReactionSpec(arity, base.terms + tuple(rc.terms), base.params, base.meta if keep else None)
    overrides = {
        k: getattr(rc, k)
        for k in ("monotone_decreasing", "singular_limit", "growth_C", "growth_gamma")
        if getattr(rc, k) is not None
    }
    if overrides:
        spec = ReactionSpec(spec.arity, spec.terms, spec.params, replace(spec.meta, **overrides))
    return spec


def build_problem(cfg: ProblemConfig, n: int | None = None):
    grid = build_grid_for(cfg, n)
    reaction = build_reaction(cfg)
    if cfg.arity == "system":
        return SystemProblem.neumann(grid, cfg.p, cfg.q, reaction, cfg.grad_floor)
    if cfg.bracket == "shifted":
        reaction = shift_reaction(reaction, cfg.shift_eps)
    return ScalarProblem(grid, cfg.operator(), reaction)


def build_manufactured(cfg: ProblemConfig, n: int | None = None) -> Manufactured:
    if cfg.manufactured is None:
        raise ValidationError("manufactured runs need a [problem] manufactured expression")
    if cfg.arity != "scalar":
        raise ValidationError("manufactured runs support scalar problems only")
    grid = build_grid_for(cfg, n)
    return manufacture(grid, cfg.operator(), cfg.manufactured, build_reaction(cfg).terms)


def build_bracket(problem, cfg: ProblemConfig):
    """Bracket(s) selected by ``cfg.bracket``; ``None`` when no floor is needed."""
    if isinstance(problem, SystemProblem):
        return system_brackets(problem, sub0=cfg.bracket_c, super0=cfg.bracket_c)
    mode = cfg.bracket
    singular = any(t.singular for t in problem.reaction.terms)
    if mode == "auto":
        if not singular:
            return None
        mode = "distance" if problem.operator.bc == "dirichlet" else "constant"
    if mode == "none":
        return None
    if mode == "constant":
        return find_constant_subsolution(problem, cfg.bracket_c)
    if mode == "distance":
        return distance_subsolution(problem, cfg.bracket_k)
    if mode == "pair":
        return constant_pair(problem, cfg.bracket_c, cfg.bracket_super)
    return shifted_bracket(problem.grid, cfg.shift_eps)


def random_starts(sub: np.ndarray, count: int, width: float, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [sub + rng.uniform(0.0, width, sub.shape) for _ in range(count)]


__all__ = [
    "BRACKET_MODES",
    "FAMILIES",
    "ProblemConfig",
    "ReactionConfig",
    "SolverConfig",
    "build_bracket",
    "build_grid_for",
    "build_manufactured",
    "build_problem",
    "build_reaction",
    "random_starts",
]
