"""Closed-form reaction terms and sampling-based hypothesis checks.

A reaction is a sum of monomial terms

    coef * weight(x) * mod(s or t) * s^s_exp * t^t_exp * |xi1|^xi1_exp * |xi2|^xi2_exp

where ``weight`` is an optional closed-form expression in the coordinates
and ``mod`` is one of const / sin / cos of ``mod_freq`` times the chosen
variable. Scalar reactions use (x, s, xi1); system reactions add (t, xi2)
and tag every term with the equation it belongs to (0 or 1).

A term with a negative exponent on s (or t) is *singular* in that variable;
``shift`` > 0 moves the whole argument of that variable by epsilon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy

from .errors import SingularDomain, ValidationError

MODULATORS = ("const", "sin", "cos")
GAUSS_POINTS = 32
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(GAUSS_POINTS)

X_SYM, Y_SYM = sympy.symbols("x y", real=True)


@lru_cache(maxsize=256)
def compile_expression(expr: str, dim: int) -> Callable[[np.ndarray], np.ndarray]:
    """Compile a closed-form expression in x (and y) into a nodal evaluator."""
    parsed = sympy.sympify(expr, locals={"x": X_SYM, "y": Y_SYM, "pi": sympy.pi})
    free = parsed.free_symbols - {X_SYM, Y_SYM}
    if free or (dim == 1 and Y_SYM in parsed.free_symbols):
        raise ValidationError(f"expression {expr!r} uses unknown symbols {sorted(map(str, free))}")
    fn = sympy.lambdify((X_SYM, Y_SYM), parsed, modules="numpy")

    def evaluate(coords: np.ndarray) -> np.ndarray:
        coords = np.atleast_2d(coords)
        xs = coords[:, 0]
        ys = coords[:, 1] if coords.shape[1] > 1 else np.zeros_like(xs)
        return np.broadcast_to(np.asarray(fn(xs, ys), dtype=float), xs.shape).copy()

    return evaluate


@dataclass(frozen=True)
class Term:
    coef: float = 1.0
    s_exp: float = 0.0
    t_exp: float = 0.0
    xi1_exp: float | None = None
    xi2_exp: float | None = None
    modulator: str = "const"
    mod_var: str = "s"
    mod_freq: float = 1.0
    weight: str | None = None
    equation: int = 0
    shift: float = 0.0

    @property
    def singular_in_s(self) -> bool:
        return self.s_exp < 0

    @property
    def singular_in_t(self) -> bool:
        return self.t_exp < 0

    @property
    def singular(self) -> bool:
        return self.singular_in_s or self.singular_in_t

    @property
    def convective(self) -> bool:
        return self.xi1_exp is not None or self.xi2_exp is not None

    @property
    def depends_on_s(self) -> bool:
        return self.s_exp != 0 or (self.modulator != "const" and self.mod_var == "s")

    @property
    def depends_on_t(self) -> bool:
        return self.t_exp != 0 or (self.modulator != "const" and self.mod_var == "t")

    @property
    def kind(self) -> str:
        if self.singular:
            return "singular"
        if self.convective:
            return "convective"
        if self.depends_on_s or self.depends_on_t:
            return "growth"
        return "source"

    def weight_values(self, coords: np.ndarray) -> np.ndarray:
        coords = np.atleast_2d(coords)
        if self.weight is None:
            return np.ones(coords.shape[0])
        return compile_expression(self.weight, coords.shape[1])(coords)

    def s_factor(self, s) -> np.ndarray:
        """The s-dependent factor mod(s') * s'^s_exp, with s' the shifted argument."""
        s = np.asarray(s, dtype=float)
        arg = s + self.shift if self.singular_in_s else s
        out = arg**self.s_exp if self.s_exp else np.ones_like(arg)
        if self.modulator != "const" and self.mod_var == "s":
            out = out * _modulate(self.modulator, self.mod_freq * arg)
        return out

    def s_factor_derivative(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        arg = s + self.shift if self.singular_in_s else s
        a = self.s_exp
        power = arg**a if a else np.ones_like(arg)
        dpower = a * arg ** (a - 1) if a else np.zeros_like(arg)
        if self.modulator != "const" and self.mod_var == "s":
            w = self.mod_freq
            m = _modulate(self.modulator, w * arg)
            dm = w * (np.cos(w * arg) if self.modulator == "sin" else -np.sin(w * arg))
            return dpower * m + power * dm
        return dpower

    def s_integral(self, lo, hi) -> np.ndarray:
        """Integral of ``s_factor`` over [lo, hi], exact where a closed form exists."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        shift = self.shift if self.singular_in_s else 0.0
        a = self.s_exp
        modulated = self.modulator != "const" and self.mod_var == "s"
        if not modulated:
            if a == -1:
                return np.log(hi + shift) - np.log(lo + shift)
            return ((hi + shift) ** (a + 1) - (lo + shift) ** (a + 1)) / (a + 1)
        if a == 0:
            w = self.mod_freq
            if self.modulator == "sin":
                return (np.cos(w * (lo + shift)) - np.cos(w * (hi + shift))) / w
            return (np.sin(w * (hi + shift)) - np.sin(w * (lo + shift))) / w
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        pts = mid[..., None] + half[..., None] * _GL_NODES
        return half * np.sum(self.s_factor(pts) * _GL_WEIGHTS, axis=-1)

    def evaluate(self, coords, s, xi1=None, t=None, xi2=None) -> np.ndarray:
        return self.frozen_factor(coords, xi1, t, xi2) * self.s_factor(s)

    def frozen_factor(self, coords, xi1=None, t=None, xi2=None) -> np.ndarray:
        """Everything except the s-dependent factor."""
        coords = np.atleast_2d(coords)
        v = self.coef * self.weight_values(coords)
        if self.depends_on_t:
            t = np.asarray(t, dtype=float)
            targ = t + self.shift if self.singular_in_t else t
            if self.t_exp:
                v = v * targ**self.t_exp
            if self.modulator != "const" and self.mod_var == "t":
                v = v * _modulate(self.modulator, self.mod_freq * targ)
        if self.xi1_exp is not None:
            v = v * _norm(xi1, coords.shape) ** self.xi1_exp
        if self.xi2_exp is not None:
            v = v * _norm(xi2, coords.shape) ** self.xi2_exp
        return v


def _modulate(kind: str, arg):
    if kind == "sin":
        return np.sin(arg)
    if kind == "cos":
        return np.cos(arg)
    return np.ones_like(arg)


def _norm(xi, shape) -> np.ndarray:
    if xi is None:
        return np.zeros(shape[0])
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 1 and shape[0] == 1:
        xi = xi[None, :]
    return np.sqrt(np.sum(xi * xi, axis=-1))


@dataclass(frozen=True)
class SingularMeta:
    monotone_decreasing: bool = False
    singular_limit: bool = False
    growth_C: float | None = None
    growth_gamma: float | None = None


@dataclass(frozen=True)
class ReactionSpec:
    arity: str = "scalar"
    terms: tuple[Term, ...] = ()
    params: dict = field(default_factory=dict)
    meta: SingularMeta | None = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.meta is None:
            object.__setattr__(self, "meta", self._derived_meta())
        problems = self.validate()
        if problems:
            raise ValidationError(problems)

    def _derived_meta(self) -> SingularMeta:
        sing = [t for t in self.terms if t.singular]
        decreasing = bool(sing) and all(
            t.coef >= 0 and t.modulator == "const" and t.singular_in_s and not t.depends_on_t for t in sing
        )
        return SingularMeta(monotone_decreasing=decreasing, singular_limit=bool(sing))

    def validate(self) -> list[str]:
        problems = []
        if self.arity not in ("scalar", "system"):
            problems.append(f"arity must be scalar or system, got {self.arity!r}")
        for name, val in self.params.items():
            if not val > 0:
                problems.append(f"declared exponent {name} must be positive (got {val})")
        for i, t in enumerate(self.terms):
            tag = f"term {i + 1}"
            if t.modulator not in MODULATORS:
                problems.append(f"{tag}: modulator must be one of {MODULATORS}")
            if t.mod_var not in ("s", "t"):
                problems.append(f"{tag}: mod_var must be s or t")
            for nm in ("xi1_exp", "xi2_exp"):
                val = getattr(t, nm)
                if val is not None and val < 0:
                    problems.append(f"{tag}: {nm} must be nonnegative")
            if t.shift < 0:
                problems.append(f"{tag}: shift must be nonnegative")
            if self.arity == "scalar":
                if t.depends_on_t or t.xi2_exp is not None:
                    problems.append(f"{tag}: scalar reactions cannot depend on t or xi2")
                if t.equation != 0:
                    problems.append(f"{tag}: scalar reactions have a single equation")
                if t.singular and t.convective:
                    problems.append(f"{tag}: the singular part must not depend on the gradient")
            elif t.equation not in (0, 1):
                problems.append(f"{tag}: equation index must be 0 or 1")
        meta = self.meta
        has_singular = any(t.singular for t in self.terms)
        if has_singular and not meta.singular_limit:
            problems.append("a term s^-eta is present, so singular_limit must be true")
        if meta.growth_C is not None and not meta.growth_C > 0:
            problems.append(f"growth constant C must be positive (got {meta.growth_C})")
        if meta.growth_gamma is not None and not 0 < meta.growth_gamma < 1:
            problems.append(f"growth exponent gamma must lie in (0, 1) (got {meta.growth_gamma})")
        return problems

    @property
    def has_shift(self) -> bool:
        return any(t.shift > 0 for t in self.terms if t.singular)

    def singular_part(self) -> "ReactionSpec":
        return replace(self, terms=tuple(t for t in self.terms if t.singular))

    def regular_part(self) -> "ReactionSpec":
        return replace(self, terms=tuple(t for t in self.terms if not t.singular), meta=SingularMeta())

    def equation_terms(self, equation: int) -> tuple[Term, ...]:
        return tuple(t for t in self.terms if t.equation == equation)

    def plus(self, *terms: Term) -> "ReactionSpec":
        return replace(self, terms=self.terms + tuple(terms))

    def scaled(self, factor: float) -> "ReactionSpec":
        return replace(self, terms=tuple(replace(t, coef=t.coef * factor) for t in self.terms))


def eval_reaction(spec: ReactionSpec, x, s, xi1=None, t=None, xi2=None):
    """Evaluate h (scalar) or the pair (f, g) (system) at points ``x``.

    Raises SingularDomain for s <= 0 (t <= 0); a shifted reaction accepts 0.
    """
    single = np.ndim(x) <= 1
    coords = np.atleast_2d(np.asarray(x, dtype=float))
    if np.ndim(x) == 0:
        coords = np.asarray([[float(x)]])
    s = np.broadcast_to(np.asarray(s, dtype=float), coords.shape[:1])
    _check_domain(spec, s, "s")
    if spec.arity == "system":
        if t is None:
            raise TypeError("system reactions need t")
        t = np.broadcast_to(np.asarray(t, dtype=float), coords.shape[:1])
        _check_domain(spec, t, "t")
    xi1 = _as_rows(xi1, coords)
    xi2 = _as_rows(xi2, coords)

    def total(terms):
        out = np.zeros(coords.shape[0])
        for term in terms:
            out += term.evaluate(coords, s, xi1, t, xi2)
        return float(out[0]) if single else out

    if spec.arity == "scalar":
        return total(spec.terms)
    return total(spec.equation_terms(0)), total(spec.equation_terms(1))


def _check_domain(spec, vals, name):
    vals = np.asarray(vals)
    bad = vals < 0 if spec.has_shift else vals <= 0
    if np.any(bad):
        raise SingularDomain(f"{name} must be positive (min {np.min(vals):.3e}); truncate before evaluating")


def _as_rows(xi, coords):
    if xi is None:
        return np.zeros_like(coords)
    xi = np.asarray(xi, dtype=float)
    if xi.ndim <= 1:
        xi = np.broadcast_to(np.atleast_1d(xi), coords.shape)
    return xi


@dataclass
class Certificate:
    ok: bool
    witnesses: list = field(default_factory=list)
    note: str = ""


def growth_s_grid(n: int = 64) -> np.ndarray:
    """``n`` log-spaced samples strictly inside (1e-6, 1)."""
    return np.logspace(-6, 0, n + 2)[1:-1]


def check_growth(spec: ReactionSpec, coords, C=None, gamma=None, s_grid=None) -> Certificate:
    """Sample g(x, s) * s^gamma <= C over nodes x and s in (1e-6, 1)."""
    C = spec.meta.growth_C if C is None else C
    gamma = spec.meta.growth_gamma if gamma is None else gamma
    if C is None or gamma is None:
        raise ValueError("growth check needs C and gamma (from metadata or arguments)")
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    s_grid = growth_s_grid() if s_grid is None else np.asarray(s_grid)
    g = spec.singular_part()
    witnesses = []
    for s in s_grid:
        vals = np.asarray(_eval_any(g, coords, s))
        scaled = vals * s**gamma
        bad = np.flatnonzero(scaled > C * (1 + 1e-12))
        witnesses += [(tuple(coords[i]), float(s), float(scaled[i])) for i in bad]
    return Certificate(ok=not witnesses, witnesses=witnesses)


def check_monotone_decreasing(spec: ReactionSpec, coords, s_grid=None, tol: float = 1e-12) -> Certificate:
    """g(x, .) non-increasing on (0, 1] at every sampled x, and g(., 1) not identically 0.

    ``g`` is the singular part of ``spec``, or all of it when no term is singular.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    s_grid = np.append(growth_s_grid(), 1.0) if s_grid is None else np.sort(np.asarray(s_grid))
    g = spec.singular_part() if any(t.singular for t in spec.terms) else spec
    table = np.array([np.asarray(_eval_any(g, coords, s)) for s in s_grid])
    jumps = np.diff(table, axis=0)
    witnesses = [
        ("increase", tuple(coords[j]), float(s_grid[i]), float(jumps[i, j]))
        for i, j in zip(*np.nonzero(jumps > tol))
    ]
    at_one = np.asarray(_eval_any(g, coords, 1.0))
    if not np.max(at_one) > 0:
        witnesses.append(("g(.,1) vanishes", None, 1.0, float(np.max(at_one))))
    return Certificate(ok=not witnesses, witnesses=witnesses)


def _eval_any(spec, coords, s):
    if not spec.terms:
        return np.zeros(coords.shape[0])
    s_arr = np.full(coords.shape[0], s)
    if spec.arity == "system":
        return eval_reaction(spec, coords, s_arr, t=np.ones(coords.shape[0]))[0]
    return eval_reaction(spec, coords, s_arr)


CHAIN_PARAMS = ("alpha1", "beta1", "gamma1", "delta1", "alpha2", "beta2", "gamma2", "delta2")


def check_parameter_chain(spec: ReactionSpec, p: float, q: float) -> bool:
    """max(g1, d1) < b1 - a1 < p - 1 and max(g2, d2) < a2 - b2 < q - 1."""
    missing = [k for k in CHAIN_PARAMS if k not in spec.params]
    if spec.arity != "system" or missing:
        raise ValueError(f"parameter chain needs a system reaction declaring {CHAIN_PARAMS}; missing {missing}")
    a1, b1, g1, d1, a2, b2, g2, d2 = (spec.params[k] for k in CHAIN_PARAMS)
    first = max(g1, d1) < b1 - a1 < p - 1
    second = max(g2, d2) < a2 - b2 < q - 1
    return bool(first and second)


# -- model families ---------------------------------------------------------


def h_family(eta: float, p: float, a: float | str = 1.0, convection: float = 1.0) -> ReactionSpec:
    """a(x) (s^-eta + s^(p-1) + convection * |xi|^(p-1)), split into singular and regular parts."""
    weight = None if not isinstance(a, str) else a
    coef = 1.0 if isinstance(a, str) else float(a)
    terms = [
        Term(coef=coef, s_exp=-eta, weight=weight),
        Term(coef=coef, s_exp=p - 1, weight=weight),
    ]
    if convection:
        terms.append(Term(coef=coef * convection, xi1_exp=p - 1, weight=weight))
    meta = SingularMeta(
        monotone_decreasing=coef >= 0,
        singular_limit=True,
        growth_C=abs(coef) if weight is None else None,
        growth_gamma=eta if 0 < eta < 1 else None,
    )
    return ReactionSpec("scalar", tuple(terms), {"eta": eta}, meta)


def system_family(alpha1, beta1, gamma1, delta1, alpha2, beta2, gamma2, delta2) -> ReactionSpec:
    """f = sin(s)(s^-a1 t^b1 - |xi1|^g1 - |xi2|^d1), g = cos(t)(s^a2 t^-b2 - |xi1|^g2 - |xi2|^d2)."""
    sin_s = dict(modulator="sin", mod_var="s", equation=0)
    cos_t = dict(modulator="cos", mod_var="t", equation=1)
    terms = (
        Term(s_exp=-alpha1, t_exp=beta1, **sin_s),
        Term(coef=-1.0, xi1_exp=gamma1, **sin_s),
        Term(coef=-1.0, xi2_exp=delta1, **sin_s),
        Term(s_exp=alpha2, t_exp=-beta2, **cos_t),
        Term(coef=-1.0, xi1_exp=gamma2, **cos_t),
        Term(coef=-1.0, xi2_exp=delta2, **cos_t),
    )
    params = dict(zip(CHAIN_PARAMS, (alpha1, beta1, gamma1, delta1, alpha2, beta2, gamma2, delta2)))
    return ReactionSpec("system", terms, params, SingularMeta(singular_limit=True))


def sine_ladder(perturbation: str | None = None, amplitude: float = 0.01) -> ReactionSpec:
    """sin(pi s) + amplitude * b(x): constant sub/super pairs alternate between integers."""
    terms = [Term(modulator="sin", mod_var="s", mod_freq=math.pi)]
    if perturbation is not None and amplitude:
        terms.append(Term(coef=amplitude, weight=perturbation))
    return ReactionSpec("scalar", tuple(terms))


def source_term(expr: str, coef: float = 1.0) -> Term:
    return Term(coef=coef, weight=expr)
