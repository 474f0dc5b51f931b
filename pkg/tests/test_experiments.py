import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unfreeze.errors import BracketLadderFailed, ValidationError
from unfreeze.experiments import (
    ExperimentResult,
    ExperimentSpec,
    Table,
    format_value,
    hypothesis_audit,
    run_compare_desingularization,
    run_convergence,
    run_experiment,
    run_multiplicity,
    run_solve,
    run_uniqueness,
)
from unfreeze.problems import ProblemConfig, ReactionConfig, SolverConfig
from unfreeze.reactions import Term

HEADLINE = ProblemConfig(n=64, reaction=ReactionConfig("h", {"eta": 0.5, "convection": 0.1}))
LADDER = ProblemConfig(n=64, lam=0.0, beta=0.0, bc="neumann",
                       reaction=ReactionConfig("sine_ladder", {"perturbation": "sin(2*pi*x)"}))
CHAIN_OK = dict(alpha1=0.1, beta1=0.5, gamma1=0.2, delta1=0.2, alpha2=0.6, beta2=0.1, gamma2=0.3, delta2=0.3)
SYSTEM = ProblemConfig(n=32, arity="system", p=2.0, q=2.0, lam=1.0, beta=0.0, bc="neumann",
                       reaction=ReactionConfig("system", CHAIN_OK))


@pytest.fixture(scope="module")
def headline_solve():
    return run_solve(HEADLINE)


class TestFormatting:
    @pytest.mark.parametrize("value,text", [(None, ""), (True, "true"), (False, "false"), (3, "3"),
                                            (np.int64(7), "7"), (0.1, "0.1"), ("abc", "abc")])
    def test_format_value(self, value, text):
        assert format_value(value) == text

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_float_round_trip(self, x):
        assert float(format_value(x)) == x

    def test_table_csv(self, tmp_path):
        table = Table(("a", "b"), [(1, 0.5), (2, None)])
        table.write_csv(tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text() == "a,b\n1,0.5\n2,\n"
        assert table.column("b") == [0.5, None]


class TestSpecValidation:
    @pytest.mark.parametrize("kwargs,fragment", [
        ({"levels": (32, 16)}, "strictly increasing"),
        ({"levels": (16,)}, "at least 2 grid levels"),
        ({"eps_schedule": (1e-2, 1e-1)}, "strictly decreasing"),
        ({"eps_schedule": (0.1, -1.0)}, "positive"),
        ({"ladder_width": 3.0}, "ladder_width"),
        ({"kind": "nope"}, "experiment kind"),
    ])
    def test_rejects(self, kwargs, fragment):
        problems = ExperimentSpec(**kwargs).validate()
        assert any(fragment in p for p in problems)

    def test_runner_raises_validation_error(self):
        with pytest.raises(ValidationError):
            run_convergence(ExperimentSpec(levels=(8,)), ProblemConfig(manufactured="2"))


class TestSolve:
    def test_headline_passes(self, headline_solve):
        r = headline_solve
        assert r.passed and r.exit_code == 0
        assert r.summary["comparison_ok"]
        assert r.summary["final_residual"] <= 1e-6
        assert r.summary["max_ratio_last5"] <= 0.9
        assert r.summary["bracket_u"] == "constant"

    def test_writes_outputs(self, headline_solve, tmp_path):
        paths = headline_solve.write(tmp_path)
        names = sorted(p.name for p in paths)
        assert names == ["solve.csv", "solve_field_solution.csv", "solve_summary.txt", "solve_trace_outer.csv"]
        header = next(csv.reader((tmp_path / "solve.csv").open()))
        assert header == ["k", "sup_dist", "c1_dist", "residual"]
        summary = (tmp_path / "solve_summary.txt").read_text().splitlines()
        assert summary[:2] == ["kind = solve", "passed = true"]

    def test_system(self):
        r = run_solve(SYSTEM)
        assert r.passed
        assert not r.summary["clamp_in_last"] and r.summary["min_margin_grad"] >= 0

    def test_failure_exit_code(self):
        r = ExperimentResult("solve", Table(("k",)), passed=False)
        assert r.exit_code == 4
        assert ExperimentResult("multiplicity", Table(("k",)), passed=False, fail_code=5).exit_code == 5


class TestCampaigns:
    def test_convergence_p2(self):
        cfg = ProblemConfig(manufactured="2+sin(pi*x)", reaction=ReactionConfig(terms=(Term(coef=0.1, xi1_exp=1),)))
        r = run_convergence(ExperimentSpec(levels=(16, 32, 64)), cfg)
        assert r.passed and r.summary["monotone_errors"]
        assert r.summary["last_order"] >= 1.9
        assert r.table.column("observed_order")[0] is None

    def test_convergence_fails_without_outer_convergence(self):
        cfg = ProblemConfig(manufactured="2+sin(pi*x)", reaction=ReactionConfig(terms=(Term(coef=0.1, xi1_exp=1),)))
        r = run_convergence(ExperimentSpec(levels=(8, 16)), cfg, SolverConfig(max_outer=1))
        assert not r.passed and r.exit_code == 4

    def test_constant_manufactured_solution_is_exact(self):
        cfg = ProblemConfig(manufactured="3", p=3, lam=1.0, beta=0.0, bc="neumann")
        r = run_convergence(ExperimentSpec(levels=(8, 16)), cfg)
        assert r.table.column("max_error") == [0.0, 0.0]
        assert r.summary["last_order"] is None
        assert r.passed and r.summary["exact"]

    def test_uniqueness_p2(self):
        cfg = ProblemConfig(n=32, reaction=ReactionConfig("h", {"eta": 0.5, "convection": 0.05}))
        r = run_uniqueness(ExperimentSpec(kind="uniqueness", n_starts=4), cfg)
        assert r.passed and r.summary["asserted"] and r.summary["unique"]
        assert len(r.table.rows) == 6

    def test_uniqueness_reported_only_off_p2(self):
        cfg = ProblemConfig(n=32, p=3.0, reaction=ReactionConfig("h", {"eta": 0.5, "convection": 0.05}))
        r = run_uniqueness(ExperimentSpec(kind="uniqueness", n_starts=3), cfg)
        assert not r.summary["asserted"] and r.passed

    def test_multiplicity_ladder(self):
        r = run_multiplicity(ExperimentSpec(kind="multiplicity"), LADDER)
        assert r.passed and r.summary["certified"]
        assert r.summary["min_pairwise_distance"] >= 0.5
        for rung, lo, hi, umin, umax, inside, *_ in r.table.rows:
            assert inside and lo <= umin <= umax <= hi

    def test_multiplicity_bad_ladder(self):
        with pytest.raises(BracketLadderFailed):
            run_multiplicity(ExperimentSpec(kind="multiplicity", ladder_start=1.5), LADDER)

    def test_multiplicity_not_separated_fails_with_bracket_code(self):
        r = run_multiplicity(ExperimentSpec(kind="multiplicity", min_separation=5.0), LADDER)
        assert not r.passed and r.exit_code == 5

    def test_compare_desingularization(self):
        r = run_compare_desingularization(ExperimentSpec(kind="compare_desingularization"), HEADLINE)
        assert r.passed and r.summary["monotone_drift"]
        drifts = [row[-1] for row in r.table.rows[1:]]
        assert all(b < a for a, b in zip(drifts, drifts[1:]))

    def test_audit_headline_all_ok(self):
        r = hypothesis_audit(ExperimentSpec(kind="hypothesis_audit"), HEADLINE)
        assert r.passed and r.summary["warnings"] == 0
        assert "hardy_sobolev" in r.table.column("check")

    def test_audit_flags_chain_violation(self):
        bad = dict(CHAIN_OK, beta1=0.1)
        cfg = ProblemConfig(n=16, arity="system", p=2.0, q=2.0, lam=1.0, beta=0.0, bc="neumann",
                            reaction=ReactionConfig("system", bad))
        r = hypothesis_audit(ExperimentSpec(kind="hypothesis_audit"), cfg)
        assert r.passed and r.exit_code == 0
        status = dict(zip(r.table.column("check"), r.table.column("status")))
        assert status["parameter_chain"] == "warning"

    def test_run_experiment_dispatch(self):
        r = run_experiment(ExperimentSpec(kind="hypothesis_audit"), HEADLINE)
        assert r.kind == "hypothesis_audit"

    def test_scalar_only(self):
        with pytest.raises(ValidationError):
            run_uniqueness(ExperimentSpec(kind="uniqueness"), SYSTEM)
