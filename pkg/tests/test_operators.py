import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unfreeze.errors import ValidationError
from unfreeze.frozen_solver import FrozenRHS
from unfreeze.grid import build_grid
from unfreeze.operators import (
    DiscreteEnergy,
    OperatorSpec,
    a_map,
    custom_norm,
    energy_gradient,
    frozen_energy,
    potential_G,
)
from unfreeze.reactions import Term

KINDS = [OperatorSpec("p", 2.0, beta=1.0), OperatorSpec("p", 3.5, beta=1.0), OperatorSpec("p", 1.5, beta=1.0),
         OperatorSpec("pq", 4.0, 2.0, beta=1.0), OperatorSpec("pq", 3.0, 1.5, beta=1.0)]
BCS = [dict(bc="robin", beta=0.7, lam=0.3), dict(bc="neumann", lam=1.0), dict(bc="dirichlet")]


def nonlinear_rhs(grid, rng):
    """Frozen right-hand side with a truncated singular term and a source."""
    mult = 0.5 + rng.uniform(0, 1, grid.n_nodes)
    return FrozenRHS(
        grid,
        source=rng.normal(size=grid.n_nodes),
        s_terms=((Term(s_exp=-0.5), mult), (Term(s_exp=1.0, coef=0.3), np.ones(grid.n_nodes))),
        floor=np.full(grid.n_nodes, 0.2),
    )


class TestOperatorSpec:
    def test_p_must_exceed_one(self):
        with pytest.raises(ValidationError, match="p must exceed 1"):
            OperatorSpec("p", 0.5, beta=1.0)

    @pytest.mark.parametrize("q", [None, 1.0, 3.0, 4.0])
    def test_q_range(self, q):
        with pytest.raises(ValidationError):
            OperatorSpec("pq", 3.0, q, beta=1.0)

    def test_robin_needs_positive_sum(self):
        with pytest.raises(ValidationError, match="lambda \\+ beta"):
            OperatorSpec("p", 2.0, lam=0.0, beta=0.0, bc="robin")

    def test_collects_every_problem(self):
        with pytest.raises(ValidationError) as info:
            OperatorSpec("x", 0.5, lam=-1.0, beta=-1.0, bc="weird")
        assert len(info.value.problems) >= 4


class TestFluxAndPotential:
    @pytest.mark.parametrize(
        "spec,xi,expected",
        [
            (OperatorSpec("p", 2.0, beta=1), (3.0, -4.0), (3.0, -4.0)),
            (OperatorSpec("p", 4.0, beta=1), (2.0, 0.0), (8.0, 0.0)),
            (OperatorSpec("pq", 4.0, 2.0, beta=1), (1.0, 0.0), (2.0, 0.0)),
        ],
    )
    def test_a_map_examples(self, spec, xi, expected):
        assert np.allclose(a_map(np.array(xi), spec), expected, rtol=1e-14)

    @pytest.mark.parametrize(
        "spec,xi,expected",
        [
            (OperatorSpec("p", 2.0, beta=1), (2.0, 0.0), 2.0),
            (OperatorSpec("p", 3.0, beta=1), (0.0, 0.0), 0.0),
            (OperatorSpec("pq", 4.0, 2.0, beta=1), (0.0, 1.0), 0.75),
        ],
    )
    def test_potential_examples(self, spec, xi, expected):
        assert potential_G(np.array(xi), spec) == pytest.approx(expected, rel=1e-14, abs=1e-14)

    @pytest.mark.parametrize("spec", KINDS)
    def test_zero_gradient_is_finite(self, spec):
        assert np.array_equal(a_map(np.zeros(2), spec), np.zeros(2))
        assert np.isfinite(potential_G(np.zeros(2), spec))

    @pytest.mark.parametrize("spec", KINDS)
    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=2))
    def test_gradient_of_potential(self, spec, xi):
        xi = np.array(xi)
        if not 0.1 <= np.linalg.norm(xi) <= 10:
            return
        h = 1e-6 * max(1.0, np.linalg.norm(xi))
        fd = np.array([(potential_G(xi + h * e, spec) - potential_G(xi - h * e, spec)) / (2 * h) for e in np.eye(2)])
        exact = a_map(xi, spec)
        assert np.max(np.abs(fd - exact)) <= 1e-6 * np.max(np.abs(exact))

    @pytest.mark.parametrize("spec", KINDS)
    def test_strict_monotonicity(self, spec, rng):
        x1, x2 = rng.normal(size=(2, 200, 2)) * 3
        inner = np.sum((a_map(x1, spec) - a_map(x2, spec)) * (x1 - x2), axis=1)
        assert np.all(inner > 0)


class TestCustomNorm:
    def test_robin_constant(self):
        g = build_grid((0, 1), 8)
        spec = OperatorSpec("p", 2.0, beta=1.0)
        assert custom_norm(np.full(g.n_nodes, -3.0), spec, g) == pytest.approx(3 * np.sqrt(2), rel=1e-14)

    def test_neumann_constant(self):
        g = build_grid((0, 1), 8)
        spec = OperatorSpec.neumann_with_potential(2.0)
        assert custom_norm(np.full(g.n_nodes, 2.5), spec, g) == pytest.approx(2.5, rel=1e-14)

    def test_robin_identity_field(self):
        g = build_grid((0, 1), 8)
        spec = OperatorSpec("p", 2.0, beta=1.0)
        assert custom_norm(g.coords[:, 0], spec, g) == pytest.approx(np.sqrt(2), rel=1e-14)

    @given(st.floats(0.01, 10))
    def test_homogeneous_for_pure_kind(self, t):
        g = build_grid((0, 1, 0, 1), 4)
        u = np.sin(3 * g.coords[:, 0]) + g.coords[:, 1] ** 2
        spec = OperatorSpec("p", 3.0, beta=0.5)
        assert custom_norm(t * u, spec, g) == pytest.approx(t * custom_norm(u, spec, g), rel=1e-12)

    @given(st.floats(0.05, 0.95))
    def test_pq_kind_between_homogeneities(self, t):
        g = build_grid((0, 1), 10)
        u = 1 + np.sin(3 * g.coords[:, 0])
        spec = OperatorSpec("pq", 4.0, 2.0, beta=1.0)
        rho = custom_norm(u, spec, g) ** 4
        rho_t = custom_norm(t * u, spec, g) ** 4
        assert t**4 * rho < rho_t <= t**2 * rho * (1 + 1e-12)


class TestFrozenEnergy:
    def test_zero_reaction_at_zero(self, unit_square):
        spec = OperatorSpec("p", 3.0, beta=1.0)
        assert frozen_energy(np.zeros(unit_square.n_nodes), None, spec, unit_square) == 0.0

    def test_constant_neumann_solution_is_stationary(self, unit_interval):
        spec = OperatorSpec.neumann_with_potential(2.0)
        rhs = FrozenRHS(unit_interval, np.ones(unit_interval.n_nodes))
        grad = energy_gradient(np.ones(unit_interval.n_nodes), rhs, spec, unit_interval)
        assert np.max(np.abs(grad)) <= 1e-15

    def test_affine_field_leaves_only_potential(self):
        g = build_grid((0, 1), 10)
        spec = OperatorSpec("p", 2.0, lam=0.7, bc="neumann")
        u = 1 + 2 * g.coords[:, 0]
        res = DiscreteEnergy(g, spec).residual(u)
        assert np.allclose(res[g.interior], 0.7 * u[g.interior], atol=1e-12)

    @pytest.mark.parametrize("bc", BCS, ids=lambda b: b["bc"])
    @pytest.mark.parametrize("spec0", KINDS, ids=lambda s: f"{s.kind}{s.p}")
    @pytest.mark.parametrize("extent,n", [((0, 1), 9), ((0, 1, 0, 2), 4)], ids=["1d", "2d"])
    def test_gradient_matches_finite_differences(self, bc, spec0, extent, n, rng):
        g = build_grid(extent, n)
        spec = OperatorSpec(spec0.kind, spec0.p, spec0.q, bc.get("lam", 0.0), bc.get("beta", 0.0), bc["bc"])
        rhs = nonlinear_rhs(g, rng)
        energy = DiscreteEnergy(g, spec, rhs)
        u = 0.5 + rng.uniform(0, 1.5, g.n_nodes)
        grad = energy.gradient(u)
        delta = 1e-5
        fd = np.zeros(g.n_nodes)
        for i in range(g.n_nodes):
            e = np.zeros(g.n_nodes)
            e[i] = delta
            fd[i] = (energy.value(u + e) - energy.value(u - e)) / (2 * delta)
        fd[~energy.free_mask] = 0.0
        scale = np.max(np.abs(grad))
        assert np.max(np.abs(fd - grad)) <= 1e-6 * scale

    @pytest.mark.parametrize("bc", BCS, ids=lambda b: b["bc"])
    def test_hessian_matches_gradient_differences(self, bc, rng):
        g = build_grid((0, 1, 0, 1), 4)
        spec = OperatorSpec("pq", 3.0, 2.0, bc.get("lam", 0.0), bc.get("beta", 0.0), bc["bc"])
        energy = DiscreteEnergy(g, spec, nonlinear_rhs(g, rng))
        u = 0.5 + rng.uniform(0, 1.5, g.n_nodes)
        H = energy.hessian(u).toarray()
        free = energy.free
        delta = 1e-6
        for col, i in enumerate(free[:6]):
            e = np.zeros(g.n_nodes)
            e[i] = delta
            fd = (energy.gradient(u + e) - energy.gradient(u - e))[free] / (2 * delta)
            assert np.max(np.abs(fd - H[:, col])) <= 1e-5 * (1 + np.max(np.abs(H[:, col])))

    def test_dirichlet_nodes_are_eliminated(self, unit_square, rng):
        spec = OperatorSpec("p", 2.0, bc="dirichlet")
        energy = DiscreteEnergy(unit_square, spec, nonlinear_rhs(unit_square, rng))
        u = 1 + rng.uniform(0, 1, unit_square.n_nodes)
        assert np.all(energy.gradient(u)[unit_square.boundary] == 0.0)
        assert energy.hessian(u).shape == (len(unit_square.interior),) * 2
