import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad

from unfreeze.bracket import (
    Bracket,
    clamp,
    constant_pair,
    constant_subsolution,
    constant_supersolution,
    distance_subsolution,
    find_constant_subsolution,
    hardy_sobolev_check,
    hardy_sobolev_ratio,
    shifted_bracket,
    subsolution_residual,
    system_brackets,
    truncate,
)
from unfreeze.errors import NotASubsolution, NotASupersolution, ValidationError
from unfreeze.experiments import default_test_functions
from unfreeze.frozen_solver import ScalarProblem, SystemProblem
from unfreeze.grid import build_grid
from unfreeze.operators import OperatorSpec
from unfreeze.reactions import ReactionSpec, Term, h_family, sine_ladder, system_family

NEUMANN0 = OperatorSpec("p", 2.0, lam=0.0, bc="neumann")
ROBIN = OperatorSpec("p", 2.0, beta=1.0)


def linear_decay_problem(grid):
    """Neumann problem with reaction r(s) = 1 - s and no potential."""
    return ScalarProblem(grid, NEUMANN0, ReactionSpec("scalar", (Term(), Term(coef=-1.0, s_exp=1.0))))


class TestConstantSubsolution:
    def test_accepts_below_equilibrium(self, unit_interval):
        b = constant_subsolution(linear_decay_problem(unit_interval), 0.5)
        assert b.tag == "constant" and np.all(b.sub == 0.5)
        res = subsolution_residual(linear_decay_problem(unit_interval), b.sub)
        assert np.allclose(res, -(1 - 0.5), atol=1e-14)

    def test_rejects_above_equilibrium(self, unit_interval):
        with pytest.raises(NotASubsolution) as info:
            constant_subsolution(linear_decay_problem(unit_interval), 2.0)
        assert info.value.margin == pytest.approx(2.0 - 1.0, rel=1e-12)
        assert info.value.node is not None

    def test_singular_with_unit_potential(self, unit_interval):
        prob = ScalarProblem(unit_interval, OperatorSpec.neumann_with_potential(2.0),
                             ReactionSpec("scalar", (Term(s_exp=-0.5),)))
        b = constant_subsolution(prob, 0.1)
        res = subsolution_residual(prob, b.sub)
        assert np.allclose(res, 0.1 - 0.1**-0.5, rtol=1e-12)

    def test_dirichlet_rejected(self, unit_interval):
        prob = ScalarProblem(unit_interval, OperatorSpec("p", 2.0, bc="dirichlet"), h_family(0.5, 2.0))
        with pytest.raises(ValidationError):
            constant_subsolution(prob, 0.1)

    def test_halving_matches_boundary_balance(self):
        # Robin boundary row: (beta c - h(c) w_b) / w_b <= 0 with w_b = h/2, beta = 1,
        # h(c) = c^-1/2 + c, so c^(3/2) (2/h - 1) <= 1.
        n = 64
        grid = build_grid((0, 1), n)
        prob = ScalarProblem(grid, ROBIN, h_family(0.5, 2.0, convection=0.1))
        c_star = (1.0 / (2 * n - 1)) ** (2.0 / 3.0)
        expected = 2.0 ** -np.ceil(np.log2(1 / c_star))
        b = find_constant_subsolution(prob)
        assert b.params["c"] == pytest.approx(expected)
        assert b.params["c"] <= c_star < 2 * b.params["c"]

    def test_accepted_brackets_recheck(self):
        grid = build_grid((0, 1, 0, 1), 8)
        prob = ScalarProblem(grid, ROBIN, h_family(0.5, 2.0, convection=0.1))
        b = find_constant_subsolution(prob)
        res = subsolution_residual(prob, b.sub)
        assert np.max(res) <= 1e-8 * max(1.0, np.max(np.abs(res)))


class TestDistanceSubsolution:
    def test_interval_geometry(self, unit_interval):
        x = unit_interval.coords[:, 0]
        assert np.allclose(1.0 * unit_interval.dist, np.minimum(x, 1 - x))
        assert np.max(unit_interval.dist) == pytest.approx(0.5)

    def test_square_center(self):
        g = build_grid((0, 1, 0, 1), 4)
        center = np.argmin(np.sum((g.coords - 0.5) ** 2, axis=1))
        assert 2 * g.dist[center] == pytest.approx(1.0)

    def test_singular_dirichlet_small_slope(self):
        g = build_grid((0, 1), 64)
        prob = ScalarProblem(g, OperatorSpec("p", 2.0, bc="dirichlet"), ReactionSpec("scalar", (Term(s_exp=-0.5),)))
        b = distance_subsolution(prob, 1e-3)
        assert b.params["k"] == 1e-3
        assert np.array_equal(b.sub, 1e-3 * g.dist)
        assert b.tag == "distance_based"

    def test_slope_is_halved_until_accepted(self):
        g = build_grid((0, 1), 64)
        prob = ScalarProblem(g, OperatorSpec("p", 2.0, bc="dirichlet"), ReactionSpec("scalar", (Term(s_exp=-0.5),)))
        b = distance_subsolution(prob, 1.0)
        k = b.params["k"]
        assert k < 1.0 and np.log2(1.0 / k) == int(np.log2(1.0 / k))
        # The peak row: 2k/h - (k/2)^-1/2 must be nonpositive (kink of the tent).
        assert 2 * k * 64 - (k / 2) ** -0.5 <= 0

    def test_neumann_rejected(self, unit_interval):
        with pytest.raises(ValidationError):
            distance_subsolution(linear_decay_problem(unit_interval), 0.1)

    def test_robin_singular_rejected(self, unit_interval):
        prob = ScalarProblem(unit_interval, ROBIN, h_family(0.5, 2.0))
        with pytest.raises(NotASubsolution):
            distance_subsolution(prob, 0.1)


class TestTruncation:
    def test_raises_to_floor(self, unit_interval):
        b = Bracket(np.ones(unit_interval.n_nodes))
        assert np.all(truncate(np.full(unit_interval.n_nodes, 0.5), b) == 1.0)

    def test_identity_above_floor(self, unit_interval):
        b = Bracket(np.full(unit_interval.n_nodes, 0.1))
        u = 1 + unit_interval.coords[:, 0]
        assert np.array_equal(truncate(u, b), u)

    def test_max_with_half(self, unit_interval):
        x = unit_interval.coords[:, 0]
        b = Bracket(np.full(unit_interval.n_nodes, 0.5))
        assert np.array_equal(truncate(x, b), np.maximum(x, 0.5))

    @given(arrays(float, 9, elements=st.floats(-5, 5)), arrays(float, 9, elements=st.floats(0, 3)))
    def test_idempotent_and_monotone(self, u, bump):
        b = Bracket(np.full(9, 0.7))
        once = truncate(u, b)
        assert np.array_equal(truncate(once, b), once)
        assert np.all(truncate(u + bump, b) >= once)
        assert np.all(once >= b.sub)

    def test_clamp_into_pair(self):
        b = Bracket(np.full(3, 1.0), np.full(3, 2.0))
        assert np.array_equal(clamp(np.array([0.0, 1.5, 9.0]), b), [1.0, 1.5, 2.0])


class TestBracketInvariants:
    def test_interior_positivity(self, unit_interval):
        with pytest.raises(ValidationError):
            Bracket(np.zeros(unit_interval.n_nodes), grid=unit_interval)

    def test_shifted_allows_zero_floor(self, unit_interval):
        b = shifted_bracket(unit_interval, 0.01)
        assert b.tag == "shifted" and b.params["eps"] == 0.01

    def test_order_and_strictness(self):
        with pytest.raises(ValidationError):
            Bracket(np.full(4, 2.0), np.full(4, 1.0))
        with pytest.raises(ValidationError):
            Bracket(np.full(4, 1.0), np.full(4, 1.0))


class TestPairs:
    def test_sine_ladder_rungs(self, unit_interval):
        prob = ScalarProblem(unit_interval, NEUMANN0, sine_ladder())
        for lo in (0.5, 2.5, 4.5):
            b = constant_pair(prob, lo, lo + 1)
            assert b.params == {"c": lo, "c_super": lo + 1}

    def test_wrong_rung_rejected(self, unit_interval):
        prob = ScalarProblem(unit_interval, NEUMANN0, sine_ladder())
        with pytest.raises(NotASubsolution):
            constant_pair(prob, 1.5, 2.5)

    def test_supersolution_by_doubling(self, unit_interval):
        got = constant_supersolution(linear_decay_problem(unit_interval))
        assert np.all(got == 1.0)

    def test_no_supersolution(self, unit_interval):
        prob = ScalarProblem(unit_interval, NEUMANN0, ReactionSpec("scalar", (Term(),)))
        with pytest.raises(NotASupersolution):
            constant_supersolution(prob, max_doublings=5)

    def test_system_brackets_signs(self):
        g = build_grid((0, 1), 16)
        prob = SystemProblem.neumann(g, 2.0, 2.0, system_family(0.1, 0.5, 0.2, 0.2, 0.6, 0.1, 0.3, 0.3))
        bu, bv = system_brackets(prob)
        # sin(s) > 0 below pi and < 0 on (pi, 2 pi); cos(t) > 0 below pi/2 and < 0 beyond.
        assert bu.params["c"] < np.pi < bu.params["c_super"] < 2 * np.pi
        assert bv.params["c"] < np.pi / 2 < bv.params["c_super"] < 1.5 * np.pi


class TestHardySobolev:
    def oracle(self):
        num = 2 * quad(lambda x: x**-0.5 * np.sin(np.pi * x), 0, 0.5)[0]
        return num / (np.pi**2 / 2)

    def test_sine_ratio_against_quadrature(self):
        g = build_grid((0, 1), 256)
        phi = np.sin(np.pi * g.coords[:, 0])
        phi[g.boundary] = 0.0
        cert = hardy_sobolev_check(g, g.dist, 0.5, 2.0, [phi])
        assert cert.finite
        assert cert.ratios[0] == pytest.approx(self.oracle(), rel=0.01)

    def test_zero_function_skipped(self, unit_interval):
        phis = [np.zeros(unit_interval.n_nodes)] + default_test_functions(unit_interval)[:1]
        cert = hardy_sobolev_check(unit_interval, unit_interval.dist, 0.5, 2.0, phis)
        assert cert.skipped == [0] and len(cert.ratios) == 1 and cert.note

    @pytest.mark.parametrize("t", [0.5, 2.0])
    @pytest.mark.parametrize("p", [2.0, 3.0])
    def test_scaling(self, t, p):
        g = build_grid((0, 1, 0, 1), 8)
        for phi in default_test_functions(g):
            r = hardy_sobolev_ratio(g, g.dist, 0.5, p, phi)
            assert hardy_sobolev_ratio(g, g.dist, 0.5, p, t * phi) == pytest.approx(t ** (1 - p) * r, rel=1e-12)

    def test_refinement_stability(self):
        ratios = []
        for n in (64, 128):
            g = build_grid((0, 1), n)
            ratios.append(hardy_sobolev_check(g, g.dist, 0.5, 2.0, default_test_functions(g)).ratios)
        assert np.all(np.abs(np.array(ratios[1]) / np.array(ratios[0]) - 1) < 0.05)

    def test_lower_bound_enforced(self, unit_interval):
        with pytest.raises(ValidationError):
            hardy_sobolev_check(unit_interval, unit_interval.dist, 0.5, 2.0,
                                default_test_functions(unit_interval), k=2.0)

    def test_boundary_values_enforced(self, unit_interval):
        with pytest.raises(ValidationError):
            hardy_sobolev_check(unit_interval, unit_interval.dist, 0.5, 2.0, [np.ones(unit_interval.n_nodes)])
