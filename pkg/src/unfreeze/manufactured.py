"""Manufactured solutions: exact source and boundary flux derived symbolically.

Given u*(x[, y]), an operator and extra reaction terms, the returned problem
has source = -div a(grad u*) + lam u*^(p-1) - (extra terms at u*) and, for
Robin/Neumann boundaries, inhomogeneous flux data a(grad u*).n + beta u*^(p-1).
The discrete problem then has u* as its continuous solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy

from .frozen_solver import ScalarProblem
from .grid import Grid
from .operators import OperatorSpec
from .reactions import X_SYM, Y_SYM, ReactionSpec, Term, compile_expression


@dataclass(frozen=True)
class Manufactured:
    expr: str
    source_expr: str
    problem: ScalarProblem
    exact: np.ndarray


def _sym(expr: str):
    return sympy.sympify(expr, locals={"x": X_SYM, "y": Y_SYM, "pi": sympy.pi})


def _term_symbolic(term: Term, u, grad_sq):
    v = sympy.Float(term.coef)
    if term.weight is not None:
        v *= _sym(term.weight)
    arg = u + term.shift if term.singular_in_s else u
    if term.s_exp:
        v *= arg ** sympy.nsimplify(term.s_exp)
    if term.modulator != "const":
        fn = sympy.sin if term.modulator == "sin" else sympy.cos
        v *= fn(sympy.nsimplify(term.mod_freq) * arg)
    if term.xi1_exp is not None:
        v *= grad_sq ** (sympy.nsimplify(term.xi1_exp) / 2)
    return v


def flux_components(u, spec: OperatorSpec, dim: int):
    vars_ = (X_SYM, Y_SYM)[:dim]
    grads = [sympy.diff(u, v) for v in vars_]
    grad_sq = sum(g**2 for g in grads)
    flux = [sympy.Integer(0)] * dim
    for r in spec.exponents:
        factor = grad_sq ** ((sympy.nsimplify(r) - 2) / 2)
        flux = [f + factor * g for f, g in zip(flux, grads)]
    return flux, grad_sq


def manufacture(grid: Grid, spec: OperatorSpec, expr: str, terms=()) -> Manufactured:
    """Scalar problem with exact solution ``expr`` and reaction ``terms`` + derived source."""
    dim = grid.dimension
    u = _sym(expr)
    flux, grad_sq = flux_components(u, spec, dim)
    div = sum(sympy.diff(f, v) for f, v in zip(flux, (X_SYM, Y_SYM)[:dim]))
    p = sympy.nsimplify(spec.p)
    source = -div + sympy.nsimplify(spec.lam) * u ** (p - 1)
    for term in terms:
        source -= _term_symbolic(term, u, grad_sq)
    source_expr = str(source)

    exact = compile_expression(expr, dim)(grid.coords)
    boundary_data = None
    if spec.bc in ("robin", "neumann"):
        bcoords = grid.coords[grid.boundary]
        comps = [compile_expression(str(f), dim)(bcoords) for f in flux]
        data = sum(c * grid.normals[:, d] for d, c in enumerate(comps))
        if spec.bc == "robin":
            data = data + spec.beta * np.abs(exact[grid.boundary]) ** (spec.p - 1)
        boundary_data = np.zeros(grid.n_nodes)
        boundary_data[grid.boundary] = data
    reaction = ReactionSpec("scalar", tuple(terms) + (Term(weight=source_expr),))
    problem = ScalarProblem(grid, spec, reaction, boundary_data)
    return Manufactured(expr, source_expr, problem, exact)
