"""The flux map a(xi) = a0(|xi|) xi, its potential G, and the discrete energy.

Two operator kinds are supported: the pure r-Laplacian (``kind="p"``,
a0(t) = t^(p-2)) and the (p,q) sum (``kind="pq"``, a0(t) = t^(p-2) + t^(q-2)).
For an exponent below 2, a0 is singular at the origin; there |xi| is replaced
by sqrt(|xi|^2 + EPS_GRAD^2) and G by the matching primitive, so that
grad G = a still holds exactly.

The discrete energy of a frozen problem is

    J(u) = sum_e |e| G(grad_e u) + beta/p sum_b sigma_b |u_b|^p
           + lam/p sum_i w_i |u_i|^p - sum_i w_i H_i(u_i) - sum_b sigma_b g_b u_b

with piecewise-linear element gradients, trapezoidal (lumped) volume
weights ``w_i`` and boundary weights ``sigma_b``. ``H_i`` is the primitive
of the frozen right-hand side and ``g_b`` optional inhomogeneous flux data.
Its exact derivative is the nodal residual used everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NonFiniteEnergy, ValidationError
from .grid import DiscreteField, Grid

EPS_GRAD = 1e-10

KINDS = ("p", "pq")
BOUNDARY_KINDS = ("robin", "neumann", "dirichlet")


@dataclass(frozen=True)
class OperatorSpec:
    kind: str = "p"
    p: float = 2.0
    q: float | None = None
    lam: float = 0.0
    beta: float = 0.0
    bc: str = "robin"

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ValidationError(problems)

    def validate(self) -> list[str]:
        problems = []
        if self.kind not in KINDS:
            problems.append(f"operator kind must be one of {KINDS}, got {self.kind!r}")
        if self.bc not in BOUNDARY_KINDS:
            problems.append(f"boundary kind must be one of {BOUNDARY_KINDS}, got {self.bc!r}")
        if not (1 < self.p < np.inf):
            problems.append(f"p must exceed 1 (got {self.p})")
        if self.kind == "pq":
            if self.q is None or not (1 < self.q < self.p):
                problems.append(f"q must lie in (1, p) for the (p,q) operator (got q={self.q}, p={self.p})")
        if self.lam < 0:
            problems.append(f"lambda must be nonnegative (got {self.lam})")
        if self.beta < 0:
            problems.append(f"beta must be nonnegative (got {self.beta})")
        if self.bc == "robin" and not self.lam + self.beta > 0:
            problems.append("Robin problems need lambda + beta > 0")
        return problems

    @property
    def exponents(self) -> tuple[float, ...]:
        return (self.p,) if self.kind == "p" else (self.p, self.q)

    @classmethod
    def neumann_with_potential(cls, p: float) -> "OperatorSpec":
        """Pure p-Laplacian with unit potential and zero flux."""
        return cls(kind="p", p=p, lam=1.0, beta=0.0, bc="neumann")


def _radius(xi: np.ndarray, r: float) -> np.ndarray:
    sq = np.sum(xi * xi, axis=-1)
    if r < 2:
        sq = sq + EPS_GRAD**2
    return np.sqrt(sq)


def a_map(xi, spec: OperatorSpec) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    out = np.zeros_like(xi)
    for r in spec.exponents:
        rad = _radius(xi, r)
        if r == 2:
            out += xi
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            a0 = np.where(rad > 0, rad ** (r - 2), 0.0)
        out += a0[..., None] * xi
    return out


def potential_G(xi, spec: OperatorSpec) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    total = np.zeros(xi.shape[:-1])
    for r in spec.exponents:
        total += _radius(xi, r) ** r / r
        if r < 2:
            total -= EPS_GRAD**r / r
    return total if total.ndim else float(total)


def a_jacobian(xi: np.ndarray, spec: OperatorSpec) -> np.ndarray:
    """Derivative of ``a`` at each row of ``xi``, shape (m, dim, dim)."""
    xi = np.asarray(xi, dtype=float)
    m, dim = xi.shape
    eye = np.broadcast_to(np.eye(dim), (m, dim, dim))
    out = np.zeros((m, dim, dim))
    outer = xi[:, :, None] * xi[:, None, :]
    for r in spec.exponents:
        if r == 2:
            out += eye
            continue
        rad = _radius(xi, r)
        with np.errstate(divide="ignore", invalid="ignore"):
            a0 = np.where(rad > 0, rad ** (r - 2), 0.0)
            c = np.where(rad > 0, (r - 2) * rad ** (r - 4), 0.0)
        out += a0[:, None, None] * eye + c[:, None, None] * outer
    return out


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)


def custom_norm(u, spec: OperatorSpec, grid: Grid | None = None) -> float:
    """The energy norm attached to the boundary condition.

    Robin: (p int G(grad u) + beta int_boundary |u|^p)^(1/p).
    Neumann: (p int G(grad u) + int |u|^p)^(1/p), which for the pure
    p-Laplacian is the standard W^{1,p} norm.
    Dirichlet: (p int G(grad u))^(1/p).
    """
    if isinstance(u, DiscreteField):
        grid = u.grid
    vals = _values(u)
    p = spec.p
    total = p * float(grid.elem_volumes @ potential_G(grid.element_gradients(vals), spec))
    if spec.bc == "robin":
        total += spec.beta * float(grid.surface_weights @ np.abs(vals[grid.boundary]) ** p)
    elif spec.bc == "neumann":
        total += float(grid.node_weights @ np.abs(vals) ** p)
    return max(total, 0.0) ** (1.0 / p)


class DiscreteEnergy:
    """Energy, gradient and Hessian of a frozen problem on a grid.

    ``rhs`` is any object exposing ``value(u)``, ``derivative(u)``,
    ``primitive(u)`` and ``boundary_data`` (see ``frozen_solver.FrozenRHS``);
    ``None`` means a zero reaction.
    """

    def __init__(self, grid: Grid, spec: OperatorSpec, rhs=None):
        self.grid = grid
        self.spec = spec
        self.rhs = rhs
        free = np.ones(grid.n_nodes, dtype=bool)
        if spec.bc == "dirichlet":
            free[grid.boundary] = False
        self.free_mask = free
        self.free = np.flatnonzero(free)

    def expand(self, x_free) -> np.ndarray:
        u = np.zeros(self.grid.n_nodes)
        u[self.free] = x_free
        return u

    def _boundary_data(self):
        data = getattr(self.rhs, "boundary_data", None)
        if data is None or self.spec.bc == "dirichlet":
            return None
        return self.grid.boundary_field(data)

    def value(self, u) -> float:
        g = self.grid
        spec = self.spec
        u = _values(u)
        p = spec.p
        J = float(g.elem_volumes @ potential_G(g.element_gradients(u), spec))
        ub = u[g.boundary]
        if spec.bc == "robin" and spec.beta:
            J += spec.beta / p * float(g.surface_weights @ np.abs(ub) ** p)
        if spec.lam:
            J += spec.lam / p * float(g.node_weights[self.free] @ np.abs(u[self.free]) ** p)
        if self.rhs is not None:
            with np.errstate(all="ignore"):
                H = self.rhs.primitive(u)
            J -= float(g.node_weights[self.free] @ H[self.free])
        data = self._boundary_data()
        if data is not None:
            J -= float(g.surface_weights @ (data * ub))
        if not np.isfinite(J):
            raise NonFiniteEnergy("energy is not finite; the reaction was evaluated outside its domain")
        return J

    def gradient(self, u) -> np.ndarray:
        """Exact derivative dJ/du_i; zero on eliminated Dirichlet nodes."""
        g = self.grid
        spec = self.spec
        u = _values(u)
        p = spec.p
        flux = a_map(g.element_gradients(u), spec) * g.elem_volumes[:, None]
        grad = g.elem_grad.T @ flux.ravel()
        if spec.bc == "robin" and spec.beta:
            ub = u[g.boundary]
            grad[g.boundary] += spec.beta * g.surface_weights * np.abs(ub) ** (p - 2) * ub
        if spec.lam:
            grad += spec.lam * g.node_weights * _signed_power(u, p - 1)
        if self.rhs is not None:
            with np.errstate(all="ignore"):
                grad -= g.node_weights * np.where(self.free_mask, self.rhs.value(u), 0.0)
        data = self._boundary_data()
        if data is not None:
            grad[g.boundary] -= g.surface_weights * data
        grad[~self.free_mask] = 0.0
        if not np.all(np.isfinite(grad)):
            raise NonFiniteEnergy("energy gradient is not finite")
        return grad

    def gradient_scale(self, u) -> np.ndarray:
        """Sum of the absolute contributions to each gradient entry.

        Rounding in :meth:`gradient` is of order ``eps`` times this vector,
        which gives the attainable residual level for a given iterate.
        """
        g = self.grid
        spec = self.spec
        u = _values(u)
        p = spec.p
        flux = np.abs(a_map(g.element_gradients(u), spec)) * g.elem_volumes[:, None]
        scale = abs(g.elem_grad).T @ flux.ravel()
        if spec.bc == "robin" and spec.beta:
            scale[g.boundary] += spec.beta * g.surface_weights * np.abs(u[g.boundary]) ** (p - 1)
        if spec.lam:
            scale += abs(spec.lam) * g.node_weights * np.abs(u) ** (p - 1)
        if self.rhs is not None:
            with np.errstate(all="ignore"):
                scale += g.node_weights * np.where(self.free_mask, np.abs(self.rhs.value(u)), 0.0)
        data = self._boundary_data()
        if data is not None:
            scale[g.boundary] += g.surface_weights * np.abs(data)
        scale[~self.free_mask] = 0.0
        return scale

    def residual(self, u) -> np.ndarray:
        """Gradient divided by the lumped volume weights (strong-form residual)."""
        return self.gradient(u) / self.grid.node_weights

    def hessian(self, u) -> sp.csr_matrix:
        """Hessian restricted to the free nodes."""
        g = self.grid
        spec = self.spec
        u = _values(u)
        p = spec.p
        dim = g.dimension
        jac = a_jacobian(g.element_gradients(u), spec) * g.elem_volumes[:, None, None]
        if dim == 1:
            B = sp.diags(jac[:, 0, 0])
        else:
            B = _block_diag(jac)
        Hm = (g.elem_grad.T @ B @ g.elem_grad).tocsr()
        diag = np.zeros(g.n_nodes)
        if spec.bc == "robin" and spec.beta:
            ub = u[g.boundary]
            diag[g.boundary] += spec.beta * g.surface_weights * (p - 1) * np.abs(ub) ** (p - 2)
        if spec.lam:
            diag += spec.lam * g.node_weights * (p - 1) * np.abs(u) ** (p - 2)
        if self.rhs is not None:
            with np.errstate(all="ignore"):
                diag -= g.node_weights * np.where(self.free_mask, self.rhs.derivative(u), 0.0)
        Hm = Hm + sp.diags(diag)
        free = self.free
        return Hm[free][:, free].tocsc()


def _block_diag(blocks: np.ndarray) -> sp.csr_matrix:
    m, d, _ = blocks.shape
    base = np.arange(m)[:, None, None] * d
    rows = base + np.arange(d)[None, :, None]
    cols = base + np.arange(d)[None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(m * d, m * d))


def _signed_power(u: np.ndarray, e: float) -> np.ndarray:
    return np.sign(u) * np.abs(u) ** e


def frozen_energy(u, rhs, spec: OperatorSpec, grid: Grid | None = None) -> float:
    if isinstance(u, DiscreteField):
        grid = u.grid
    return DiscreteEnergy(grid, spec, rhs).value(u)


def energy_gradient(u, rhs, spec: OperatorSpec, grid: Grid | None = None) -> np.ndarray:
    if isinstance(u, DiscreteField):
        grid = u.grid
    return DiscreteEnergy(grid, spec, rhs).gradient(u)
