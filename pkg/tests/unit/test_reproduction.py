"""
Tests for reproduction.py - expected-quantity evaluation and suite checks.

These tests verify:
- CheckResult / RunReport pass semantics
- QuantityEvaluator on the small library instances
- Errors in a quantity are recorded instead of aborting the run
- The property checks of the acceptance suite on reduced counts
"""

import math
from dataclasses import replace

import pytest


@pytest.mark.unit
class TestCheckResult:
    """Tests for pass/fail semantics."""

    def test_no_expected_value(self):
        """Verify a bare measurement neither passes nor fails."""
        from robust_mdp_lab.reproduction import CheckResult

        assert CheckResult("q", 1.0).passed is None

    def test_within_tolerance(self):
        """Verify the symmetric tolerance is inclusive."""
        from robust_mdp_lab.reproduction import CheckResult

        assert CheckResult("q", 1.5, expected=1.0, tolerance=0.5).passed is True
        assert CheckResult("q", 1.6, expected=1.0, tolerance=0.5).passed is False

    def test_outcome_overrides_tolerance(self):
        """Verify one-sided comparisons keep their own verdict."""
        from robust_mdp_lab.reproduction import CheckResult

        assert CheckResult("q", 10.0, expected=0.0, tolerance=0.0, outcome=True).passed is True

    def test_error_fails(self):
        """Verify NaN values and errors count as failures."""
        from robust_mdp_lab.reproduction import CheckResult

        assert CheckResult("q", math.nan, expected=0.0, tolerance=1.0).passed is False
        assert CheckResult("q", 0.0, expected=0.0, tolerance=1.0, error="boom").passed is False

    def test_to_dict(self):
        """Verify optional fields only appear when set."""
        from robust_mdp_lab.reproduction import CheckResult

        assert set(CheckResult("q", 1.0).to_dict()) == {'quantity', 'value', 'seconds'}
        data = CheckResult("q", 1.0, 1.0, 0.0, "analytic").to_dict()
        assert data['passed'] is True
        assert data['provenance'] == "analytic"

    def test_report_ignores_measurements(self):
        """Verify a report passes unless a result actually failed."""
        from robust_mdp_lab.reproduction import CheckResult, RunReport

        report = RunReport('x', results=[CheckResult("a", 1.0), CheckResult("b", 1.0, 1.0, 0.0)])
        assert report.passed
        report.results.append(CheckResult("c", 2.0, 1.0, 0.0))
        assert not report.passed
        assert [r.quantity for r in report.failures] == ["c"]


@pytest.mark.unit
class TestQuantityEvaluator:
    """Tests for QuantityEvaluator."""

    def test_structural_quantities(self, example_3_1):
        """Verify the counts and the rectangularity flags."""
        from robust_mdp_lab.reproduction import QuantityEvaluator

        evaluator = QuantityEvaluator(example_3_1)

        assert evaluator.evaluate("vertex_count()") == 5.0
        assert evaluator.evaluate("s_rectangular()") == 1.0
        assert evaluator.evaluate("sa_rectangular()") == 1.0

    def test_operator_values(self, sa_gap_fixture):
        """Verify the two policy operators differ on the gap fixture."""
        from robust_mdp_lab.reproduction import QuantityEvaluator

        evaluator = QuantityEvaluator(sa_gap_fixture)

        assert evaluator.evaluate("robust_value(operator=T_pi,policy=uniform)") == pytest.approx(0.5, abs=1e-6)
        assert evaluator.evaluate("robust_value(operator=T_hat_pi,policy=uniform)") == pytest.approx(0.0, abs=1e-6)

    def test_oracle_reports_are_cached(self, appendix_d):
        """Verify value and policy at one start share a single max-min search."""
        from robust_mdp_lab.reproduction import QuantityEvaluator

        evaluator = QuantityEvaluator(appendix_d, grid_resolution=21, policy_grid_resolution=3)
        evaluator.evaluate("max_min_value(start=b)")
        first = evaluator.max_min("b")
        evaluator.evaluate("max_min_policy(start=b,state=b,action=0)")

        assert evaluator.max_min("b") is first

    def test_unknown_operator(self, sa_gap_fixture):
        """Verify a bad operator name surfaces as ValueError."""
        from robust_mdp_lab.reproduction import QuantityEvaluator

        with pytest.raises(ValueError):
            QuantityEvaluator(sa_gap_fixture).evaluate("robust_value(operator=T_x,policy=uniform)")


@pytest.mark.unit
class TestRunExpected:
    """Tests for run_expected and reproduce."""

    def test_example_passes(self, example_3_1):
        """Verify every expected quantity of the finite example is reproduced."""
        from robust_mdp_lab.reproduction import run_expected

        results = run_expected(example_3_1)

        assert len(results) == len(example_3_1.expected)
        assert all(r.passed for r in results)
        assert all(r.quantity.startswith("example_3_1: ") for r in results)

    def test_errors_are_recorded(self, example_3_1):
        """Verify a quantity that cannot be computed fails without aborting."""
        from robust_mdp_lab.instance_library import ExpectedValue
        from robust_mdp_lab.reproduction import run_expected

        broken = replace(example_3_1, expected=(
            ExpectedValue("worst_case_param(policy=uniform,param=q)", 0.0, 0.0),
            ExpectedValue("vertex_count()", 5, 0),
        ))
        results = run_expected(broken)

        assert results[0].passed is False
        assert math.isnan(results[0].value)
        assert results[0].error
        assert results[1].passed is True

    def test_reproduce_without_suite(self):
        """Verify reproduce checks only the named instances when the suite is off."""
        from robust_mdp_lab.reproduction import reproduce

        report = reproduce(["example_3_1"], suite=False)

        assert report.passed
        assert report.inputs == {'names': ["example_3_1"], 'suite': False}
        assert report.to_dict()['command'] == 'reproduce'


@pytest.mark.unit
class TestSuiteChecks:
    """Reduced-count runs of the acceptance property checks."""

    def test_ordering(self):
        """Verify u_hat <= u <= v over one instance of every variant."""
        from robust_mdp_lab.reproduction import check_ordering

        assert check_ordering(num_instances=7) == 0

    def test_implications(self):
        """Verify the SSP implication chain on random instances."""
        from robust_mdp_lab.reproduction import check_implications

        assert check_implications(num_samples=14) == 0

    def test_horizon_bound(self):
        """Verify the finite-horizon adversary stays within its bound."""
        from robust_mdp_lab.reproduction import check_horizon_bound

        assert check_horizon_bound(num_instances=7) == 0

    def test_operator_quality(self):
        """Verify residuals, contraction and monotonicity on a small pool."""
        from robust_mdp_lab.reproduction import check_operator_quality

        assert check_operator_quality(num_pairs=30, pool_size=3) == 0

    def test_ssp_structure(self):
        """Verify guaranteed SSP modes hold and the coupled set is separated."""
        from robust_mdp_lab.reproduction import check_ssp_structure

        assert check_ssp_structure(num_samples=50) == 0

    def test_suite_table(self):
        """Verify the default suite runs every acceptance check, duality included."""
        from robust_mdp_lab.reproduction import ACCEPTANCE_SUITE, DUALITY_TOL, check_duality

        checks = {check: tolerance for _, check, _, tolerance in ACCEPTANCE_SUITE}
        assert len(ACCEPTANCE_SUITE) == 8
        assert checks[check_duality] == DUALITY_TOL
