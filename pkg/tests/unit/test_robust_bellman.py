"""
Tests for robust_bellman.py - robust operators and value iteration.

These tests verify:
- Singleton sets reduce every operator to the nominal one
- T_hat^pi <= T^pi pointwise and the gap on the shared-factor fixture
- Contraction and the stopping rule of fixed_point
- T and the greedy robust policy
- The sub-fixed-point dominance check
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st


@pytest.fixture
def singleton(stay_kernel):
    """Explicit set holding only the stay/switch kernel."""
    from robust_mdp_lab.uncertainty_models import ExplicitFinite
    return ExplicitFinite((stay_kernel,))


@pytest.mark.unit
class TestSingletonSet:
    """With one kernel every robust quantity is the nominal one."""

    def test_policy_operators_match_exact(self, two_state_mdp, stay_kernel, singleton):
        """Verify both policy fixed points equal evaluate_exact."""
        from robust_mdp_lab.mdp_core import Policy, evaluate_exact
        from robust_mdp_lab.robust_bellman import fixed_point

        policy = Policy.uniform(2, 2)
        exact = evaluate_exact(two_state_mdp, policy, stay_kernel).values
        for operator in ("T_pi", "T_hat_pi"):
            report = fixed_point(operator, two_state_mdp, singleton, policy)
            np.testing.assert_allclose(report.value.values, exact, atol=1e-8)
            assert report.converged

    def test_stay_policy_values(self, two_state_mdp, singleton):
        """Verify staying forever in state 0 is worth 1 / (1 - 0.5) = 2."""
        from robust_mdp_lab.mdp_core import Policy
        from robust_mdp_lab.robust_bellman import fixed_point

        report = fixed_point("T_pi", two_state_mdp, singleton, Policy.deterministic([0, 0], 2))
        np.testing.assert_allclose(report.value.values, [2.0, 0.0], atol=1e-8)

    def test_solve_matches_nominal_optimum(self, two_state_mdp, singleton):
        """Verify u* = (2, 1) with stay at state 0 and switch at state 1."""
        from robust_mdp_lab.robust_bellman import solve_robust_mdp

        u_star, policy, report = solve_robust_mdp(two_state_mdp, singleton)

        np.testing.assert_allclose(u_star.values, [2.0, 1.0], atol=1e-8)
        np.testing.assert_allclose(policy.action_probs, [[1.0, 0.0], [0.0, 1.0]], atol=1e-9)
        assert report.policy is not None


@pytest.mark.unit
class TestOperatorOrdering:
    """Tests relating T^pi and T_hat^pi."""

    @pytest.mark.parametrize("variant", ["explicit_finite", "factor_model", "coeff_factor", "sa_coeff_factor"])
    def test_pair_operator_never_exceeds_state_operator(self, make_random, rng, variant):
        """Verify T_hat^pi(v) <= T^pi(v) for random v and pi."""
        from robust_mdp_lab.mdp_core import Policy
        from robust_mdp_lab.robust_bellman import apply_T_hat_pi, apply_T_pi

        instance = make_random(variant, seed=21)
        for _ in range(5):
            policy = Policy(rng.dirichlet(np.ones(2), size=3))
            v = rng.normal(size=3)
            hat = apply_T_hat_pi(instance.mdp, instance.uncertainty, policy, v).values
            full = apply_T_pi(instance.mdp, instance.uncertainty, policy, v).values
            assert np.all(hat <= full + 1e-12)

    def test_sa_rectangular_operators_agree(self, make_random, rng):
        """Verify the two policy operators coincide on an sa-rectangular set."""
        from robust_mdp_lab.mdp_core import Policy
        from robust_mdp_lab.robust_bellman import apply_T_hat_pi, apply_T_pi

        instance = make_random("sa_rectangular", seed=3)
        policy = Policy(rng.dirichlet(np.ones(2), size=3))
        v = rng.normal(size=3)
        np.testing.assert_allclose(
            apply_T_hat_pi(instance.mdp, instance.uncertainty, policy, v).values,
            apply_T_pi(instance.mdp, instance.uncertainty, policy, v).values,
            atol=1e-12,
        )

    def test_shared_factor_gap(self, sa_gap_fixture):
        """Verify u_hat = 0 while u^pi = 1/2 at state 0 under the uniform policy."""
        from robust_mdp_lab.mdp_core import Policy
        from robust_mdp_lab.robust_bellman import fixed_point

        mdp, uset = sa_gap_fixture.mdp, sa_gap_fixture.uncertainty
        policy = Policy.uniform(3, 2)

        hat = fixed_point("T_hat_pi", mdp, uset, policy).value.values
        full = fixed_point("T_pi", mdp, uset, policy).value.values

        np.testing.assert_allclose(hat, [0.0, 0.0, 0.0], atol=1e-8)
        np.testing.assert_allclose(full, [0.5, 0.0, 0.0], atol=1e-8)

    def test_robust_optimum_dominates_policies(self, make_random, rng):
        """Verify u* >= u^pi for random policies on an s-rectangular set."""
        from robust_mdp_lab.mdp_core import Policy
        from robust_mdp_lab.robust_bellman import fixed_point, solve_robust_mdp

        instance = make_random("s_rectangular", seed=8)
        u_star, _, _ = solve_robust_mdp(instance.mdp, instance.uncertainty)
        for _ in range(3):
            policy = Policy(rng.dirichlet(np.ones(2), size=3))
            u_pi = fixed_point("T_pi", instance.mdp, instance.uncertainty, policy).value.values
            assert np.all(u_star.values >= u_pi - 1e-7)


@pytest.mark.unit
class TestFixedPoint:
    """Tests for fixed_point's contract."""

    def test_contraction(self, make_random, rng):
        """Verify ||T^pi(v) - T^pi(w)|| <= gamma ||v - w||."""
        from robust_mdp_lab.mdp_core import Policy
        from robust_mdp_lab.robust_bellman import apply_T_pi

        instance = make_random("factor_model", seed=2)
        policy = Policy.uniform(3, 2)
        v, w = rng.normal(size=3), rng.normal(size=3)
        tv = apply_T_pi(instance.mdp, instance.uncertainty, policy, v).values
        tw = apply_T_pi(instance.mdp, instance.uncertainty, policy, w).values
        assert np.max(np.abs(tv - tw)) <= instance.mdp.discount * np.max(np.abs(v - w)) + 1e-12

    @pytest.mark.property
    @given(seed=st.integers(min_value=0, max_value=10**6),
           variant=st.sampled_from(["s_rectangular", "factor_model", "partitioned", "coeff_factor"]))
    @settings(max_examples=40, deadline=None)
    def test_optimal_operator_contracts_and_is_monotone(self, seed, variant):
        """Verify T contracts by gamma and preserves v <= w on random instances."""
        from robust_mdp_lab.instance_library import GeneratorSpec, random_instance
        from robust_mdp_lab.robust_bellman import apply_T_opt

        instance = random_instance(GeneratorSpec(variant=variant), seed)
        mdp, uset = instance.mdp, instance.uncertainty
        rng = np.random.default_rng(seed)
        v = rng.normal(size=3)
        w = rng.normal(size=3)
        above = v + rng.uniform(0.0, 1.0, size=3)

        tv = apply_T_opt(mdp, uset, v)[0].values
        tw = apply_T_opt(mdp, uset, w)[0].values
        assert np.max(np.abs(tv - tw)) <= mdp.discount * np.max(np.abs(v - w)) + 1e-9
        assert np.all(apply_T_opt(mdp, uset, above)[0].values >= tv - 1e-9)

    def test_result_within_tolerance(self, make_random):
        """Verify the returned iterate is within tol of a tighter solve."""
        from robust_mdp_lab.mdp_core import Policy
        from robust_mdp_lab.robust_bellman import fixed_point

        instance = make_random("s_rectangular", seed=5)
        policy = Policy.uniform(3, 2)
        loose = fixed_point("T_pi", instance.mdp, instance.uncertainty, policy, tol=1e-4)
        tight = fixed_point("T_pi", instance.mdp, instance.uncertainty, policy, tol=1e-12)

        assert loose.value.sup_distance(tight.value) <= 1e-4
        assert loose.iterations < tight.iterations
        assert loose.tolerance_target == pytest.approx(1e-4 * 0.1 / 1.8)

    def test_zero_discount_single_step(self, make_random):
        """Verify gamma = 0 returns the immediate expected reward after one step."""
        from robust_mdp_lab.mdp_core import Policy
        from robust_mdp_lab.robust_bellman import fixed_point

        instance = make_random("s_rectangular", seed=6, discount=0.0)
        report = fixed_point("T_pi", instance.mdp, instance.uncertainty, Policy.uniform(3, 2))
        assert report.iterations == 1
        assert report.final_residual == 0.0

    def test_max_iter_raises(self, make_random):
        """Verify ConvergenceError when the iteration budget runs out."""
        from robust_mdp_lab.errors import ConvergenceError
        from robust_mdp_lab.mdp_core import Policy
        from robust_mdp_lab.robust_bellman import fixed_point

        instance = make_random("s_rectangular", seed=7)
        with pytest.raises(ConvergenceError):
            fixed_point("T_pi", instance.mdp, instance.uncertainty, Policy.uniform(3, 2), max_iter=2)

    def test_policy_required(self, two_state_mdp, singleton):
        """Verify policy operators refuse to run without a policy."""
        from robust_mdp_lab.robust_bellman import fixed_point

        with pytest.raises(ValueError):
            fixed_point("T_hat_pi", two_state_mdp, singleton)

    def test_positive_tolerance(self, two_state_mdp, singleton):
        """Verify tol <= 0 is rejected."""
        from robust_mdp_lab.robust_bellman import fixed_point

        with pytest.raises(ValueError):
            fixed_point("T_opt", two_state_mdp, singleton, tol=0.0)

    def test_unknown_operator(self, two_state_mdp, singleton):
        """Verify an unknown operator name raises ValueError."""
        from robust_mdp_lab.robust_bellman import fixed_point

        with pytest.raises(ValueError):
            fixed_point("T_max", two_state_mdp, singleton)

    def test_set_must_fit_mdp(self, two_state_mdp, make_random):
        """Verify a three-state set is rejected for a two-state MDP."""
        from robust_mdp_lab.errors import DimensionMismatchError
        from robust_mdp_lab.robust_bellman import fixed_point

        uset = make_random("s_rectangular", seed=0).uncertainty
        with pytest.raises(DimensionMismatchError):
            fixed_point("T_opt", two_state_mdp, uset)


@pytest.mark.unit
class TestOptimalOperator:
    """Tests for T and the robust optimal policy."""

    def test_randomized_policy_on_coefficient_set(self, example_4_2):
        """Verify u*(a) = 1/4 with the mixed policy (1/2, 1/2, 0) at a."""
        from robust_mdp_lab.robust_bellman import solve_robust_mdp

        u_star, policy, _ = solve_robust_mdp(example_4_2.mdp, example_4_2.uncertainty)

        assert u_star.values[0] == pytest.approx(0.25, abs=1e-6)
        np.testing.assert_allclose(policy.action_probs[0], [0.5, 0.5, 0.0], atol=1e-6)

    def test_optimal_operator_dominates_policy_operator(self, make_random, rng):
        """Verify T(v) >= T^pi(v) for every pi."""
        from robust_mdp_lab.mdp_core import Policy
        from robust_mdp_lab.robust_bellman import apply_T_opt, apply_T_pi

        instance = make_random("coeff_factor", seed=12)
        v = rng.normal(size=3)
        best, _ = apply_T_opt(instance.mdp, instance.uncertainty, v)
        for _ in range(5):
            policy = Policy(rng.dirichlet(np.ones(2), size=3))
            value = apply_T_pi(instance.mdp, instance.uncertainty, policy, v).values
            assert np.all(best.values >= value - 1e-9)

    def test_greedy_policy_attains_operator(self, make_random, rng):
        """Verify T^pi(v) = T(v) for the returned row strategies."""
        from robust_mdp_lab.robust_bellman import apply_T_opt, apply_T_pi

        instance = make_random("s_rectangular", seed=13)
        v = rng.normal(size=3)
        best, greedy = apply_T_opt(instance.mdp, instance.uncertainty, v)
        attained = apply_T_pi(instance.mdp, instance.uncertainty, greedy, v).values
        np.testing.assert_allclose(attained, best.values, atol=1e-8)


@pytest.mark.unit
class TestSubFixedDominance:
    """Tests for check_subfixed_dominated."""

    def test_zero_is_subfixed_for_nonnegative_rewards(self, two_state_mdp, singleton):
        """Verify v = 0 is sub-fixed and dominated by u^pi."""
        from robust_mdp_lab.mdp_core import Policy
        from robust_mdp_lab.robust_bellman import check_subfixed_dominated

        assert check_subfixed_dominated(two_state_mdp, singleton, Policy.uniform(2, 2), np.zeros(2))

    def test_large_vector_not_subfixed(self, two_state_mdp, singleton):
        """Verify a vector above u^pi is reported as not sub-fixed."""
        from robust_mdp_lab.mdp_core import Policy
        from robust_mdp_lab.robust_bellman import check_subfixed_dominated

        assert not check_subfixed_dominated(two_state_mdp, singleton, Policy.uniform(2, 2), [10.0, 10.0])
