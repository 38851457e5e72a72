"""
Tests for mdp_core.py - types, exact evaluation and policy iteration.

These tests verify:
- Type invariants (stochastic rows, discount range, finite rewards, shapes)
- evaluate_exact against hand-computed values and its own fixed-point equation
- Howard policy iteration and its batched variant
- Monte-Carlo returns agree with exact evaluation
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st


def random_mdp(seed, num_states=3, num_actions=2, discount=0.9, reward_scale=1.0):
    from robust_mdp_lab.mdp_core import MdpInstance, Policy, TransitionKernel

    rng = np.random.default_rng(seed)
    mdp = MdpInstance(reward_scale * rng.uniform(-1, 1, size=(num_states, num_actions, num_states)), discount,
                      rng.dirichlet(np.ones(num_states)))
    kernel = TransitionKernel(rng.dirichlet(np.ones(num_states), size=(num_states, num_actions)))
    policy = Policy(rng.dirichlet(np.ones(num_actions), size=num_states))
    return mdp, kernel, policy


@pytest.mark.unit
class TestTypeInvariants:
    """Tests for MdpInstance, TransitionKernel, Policy and ValueVector validation."""

    def test_discount_must_be_below_one(self):
        """Verify gamma = 1 is rejected."""
        from robust_mdp_lab.errors import InvalidInstanceError
        from robust_mdp_lab.mdp_core import MdpInstance

        with pytest.raises(InvalidInstanceError):
            MdpInstance(np.zeros((2, 1, 2)), 1.0, [0.5, 0.5])

    def test_nan_rewards_rejected(self):
        """Verify NaN rewards are rejected."""
        from robust_mdp_lab.errors import InvalidInstanceError
        from robust_mdp_lab.mdp_core import MdpInstance

        rewards = np.zeros((2, 1, 2))
        rewards[0, 0, 1] = np.nan
        with pytest.raises(InvalidInstanceError):
            MdpInstance(rewards, 0.5, [0.5, 0.5])

    def test_initial_dist_shape_checked(self):
        """Verify mu must have one entry per state."""
        from robust_mdp_lab.errors import DimensionMismatchError
        from robust_mdp_lab.mdp_core import MdpInstance

        with pytest.raises(DimensionMismatchError):
            MdpInstance(np.zeros((2, 1, 2)), 0.5, [1.0])

    def test_kernel_rows_must_sum_to_one(self):
        """Verify a row summing to 0.9 is not renormalized but rejected."""
        from robust_mdp_lab.errors import InvalidInstanceError
        from robust_mdp_lab.mdp_core import TransitionKernel

        probs = np.full((2, 1, 2), 0.5)
        probs[1, 0] = [0.45, 0.45]
        with pytest.raises(InvalidInstanceError):
            TransitionKernel(probs)

    def test_negative_policy_entry_rejected(self):
        """Verify policies with negative mass are rejected."""
        from robust_mdp_lab.errors import InvalidInstanceError
        from robust_mdp_lab.mdp_core import Policy

        with pytest.raises(InvalidInstanceError):
            Policy([[1.5, -0.5]])

    def test_arrays_are_read_only(self, two_state_mdp):
        """Verify stored arrays cannot be mutated."""
        with pytest.raises(ValueError):
            two_state_mdp.rewards[0, 0, 0] = 5.0

    def test_deterministic_policy(self):
        """Verify Policy.deterministic builds one-hot rows."""
        from robust_mdp_lab.mdp_core import Policy

        policy = Policy.deterministic([1, 0], 2)
        assert policy.action_probs.tolist() == [[0.0, 1.0], [1.0, 0.0]]
        assert policy.is_deterministic()
        assert not Policy.uniform(2, 2).is_deterministic()

    def test_next_state_independence(self, two_state_mdp):
        """Verify state rewards satisfy the next-state-independence predicate."""
        from robust_mdp_lab.mdp_core import MdpInstance

        assert two_state_mdp.is_next_state_independent()
        rewards = np.zeros((2, 1, 2))
        rewards[0, 0, 1] = 1.0
        assert not MdpInstance(rewards, 0.5, [1.0, 0.0]).is_next_state_independent()

    def test_point_mass_and_with_initial_dist(self, two_state_mdp):
        """Verify start distributions can be swapped without touching rewards."""
        moved = two_state_mdp.with_initial_dist(two_state_mdp.point_mass(1))
        assert moved.initial_dist.tolist() == [0.0, 1.0]
        np.testing.assert_array_equal(moved.rewards, two_state_mdp.rewards)

    def test_value_bound(self, two_state_mdp):
        """Verify max|r| / (1 - gamma)."""
        assert two_state_mdp.value_bound() == pytest.approx(2.0)


@pytest.mark.unit
class TestEvaluateExact:
    """Tests for evaluate_exact and its helpers."""

    def test_stay_policy(self, two_state_mdp, stay_kernel):
        """Verify staying in the rewarding state is worth 1 / (1 - gamma)."""
        from robust_mdp_lab.mdp_core import Policy, evaluate_exact

        value = evaluate_exact(two_state_mdp, Policy.deterministic([0, 0], 2), stay_kernel)
        np.testing.assert_allclose(value.values, [2.0, 0.0], atol=1e-12)
        assert value.weighted(two_state_mdp.initial_dist) == pytest.approx(2.0)

    def test_switch_policy(self, two_state_mdp, stay_kernel):
        """Verify alternating states gives (4/3, 2/3)."""
        from robust_mdp_lab.mdp_core import Policy, evaluate_exact

        value = evaluate_exact(two_state_mdp, Policy.deterministic([1, 1], 2), stay_kernel)
        np.testing.assert_allclose(value.values, [4.0 / 3.0, 2.0 / 3.0], atol=1e-12)

    def test_discount_zero_is_immediate_reward(self, stay_kernel):
        """Verify gamma = 0 reduces to r_pi."""
        from robust_mdp_lab.mdp_core import MdpInstance, Policy, evaluate_exact

        rewards = np.zeros((2, 2, 2))
        rewards[1] = 3.0
        mdp = MdpInstance(rewards, 0.0, [0.5, 0.5])
        value = evaluate_exact(mdp, Policy.uniform(2, 2), stay_kernel)
        np.testing.assert_allclose(value.values, [0.0, 3.0])

    def test_shape_mismatch(self, two_state_mdp, stay_kernel):
        """Verify a policy of the wrong shape is rejected."""
        from robust_mdp_lab.errors import DimensionMismatchError
        from robust_mdp_lab.mdp_core import Policy, evaluate_exact

        with pytest.raises(DimensionMismatchError):
            evaluate_exact(two_state_mdp, Policy.uniform(3, 2), stay_kernel)

    @pytest.mark.property
    @given(seed=st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=50, deadline=None)
    def test_solution_is_fixed_point(self, seed):
        """Verify v^{pi,P} = T^{pi,P} v^{pi,P} on random instances."""
        from robust_mdp_lab.mdp_core import apply_T_pi_P, evaluate_exact

        mdp, kernel, policy = random_mdp(seed)
        value = evaluate_exact(mdp, policy, kernel)
        assert apply_T_pi_P(mdp, policy, kernel, value).residual <= 1e-9
        assert np.max(np.abs(value.values)) <= mdp.value_bound() + 1e-9

    @pytest.mark.parametrize("seed", range(10))
    def test_residual_is_absolute_for_large_values(self, seed):
        """Verify the 1e-10 residual bound holds in absolute terms when |v| is in the tens of thousands."""
        from robust_mdp_lab.mdp_core import apply_T_pi_P, evaluate_exact

        mdp, kernel, policy = random_mdp(seed, num_states=6, discount=0.99, reward_scale=1e3)
        value = evaluate_exact(mdp, policy, kernel)
        assert value.residual <= 1e-10
        assert apply_T_pi_P(mdp, policy, kernel, value).residual <= 1e-10

    def test_batched_evaluation_matches(self):
        """Verify evaluate_many agrees with evaluate_exact kernel by kernel."""
        from robust_mdp_lab.mdp_core import TransitionKernel, evaluate_exact, evaluate_many

        mdp, _, policy = random_mdp(7)
        rng = np.random.default_rng(8)
        kernels = rng.dirichlet(np.ones(3), size=(5, 3, 2))
        batched = evaluate_many(mdp, policy.action_probs, kernels)
        for n in range(5):
            single = evaluate_exact(mdp, policy, TransitionKernel(kernels[n])).values
            np.testing.assert_allclose(batched[n], single, atol=1e-10)


@pytest.mark.unit
class TestPolicyIteration:
    """Tests for solve_mdp_exact and optimal_values_many."""

    def test_two_state_optimum(self, two_state_mdp, stay_kernel):
        """Verify stay at 0, switch at 1, value (2, 1)."""
        from robust_mdp_lab.mdp_core import bellman_optimality_residual, solve_mdp_exact

        policy, value = solve_mdp_exact(two_state_mdp, stay_kernel)
        assert policy.action_probs.tolist() == [[1.0, 0.0], [0.0, 1.0]]
        np.testing.assert_allclose(value.values, [2.0, 1.0], atol=1e-12)
        assert bellman_optimality_residual(two_state_mdp, stay_kernel, value) <= 1e-12

    def test_ties_keep_lowest_action(self):
        """Verify identical actions leave the policy at action 0."""
        from robust_mdp_lab.mdp_core import MdpInstance, TransitionKernel, solve_mdp_exact

        mdp = MdpInstance(np.ones((1, 3, 1)), 0.5, [1.0])
        policy, value = solve_mdp_exact(mdp, TransitionKernel(np.ones((1, 3, 1))))
        assert policy.action_probs.tolist() == [[1.0, 0.0, 0.0]]
        assert value.values[0] == pytest.approx(2.0)

    def test_batched_optimum_matches(self):
        """Verify optimal_values_many agrees with solve_mdp_exact."""
        from robust_mdp_lab.mdp_core import TransitionKernel, optimal_values_many, solve_mdp_exact

        mdp, _, _ = random_mdp(11)
        kernels = np.random.default_rng(12).dirichlet(np.ones(3), size=(4, 3, 2))
        batched = optimal_values_many(mdp, kernels)
        for n in range(4):
            _, value = solve_mdp_exact(mdp, TransitionKernel(kernels[n]))
            np.testing.assert_allclose(batched[n], value.values, atol=1e-10)

    def test_optimum_dominates_random_policies(self):
        """Verify no random policy beats the optimal value anywhere."""
        from robust_mdp_lab.mdp_core import Policy, evaluate_exact, solve_mdp_exact

        mdp, kernel, _ = random_mdp(21)
        _, best = solve_mdp_exact(mdp, kernel)
        rng = np.random.default_rng(22)
        for _ in range(20):
            policy = Policy(rng.dirichlet(np.ones(2), size=3))
            assert np.all(evaluate_exact(mdp, policy, kernel).values <= best.values + 1e-10)


@pytest.mark.unit
class TestSimulation:
    """Tests for simulate_returns and default_horizon."""

    def test_default_horizon(self):
        """Verify the smallest H with gamma^H <= accuracy."""
        from robust_mdp_lab.mdp_core import default_horizon

        assert default_horizon(0.5, 1e-8) == 27
        assert default_horizon(0.0) == 1

    def test_deterministic_returns(self, two_state_mdp, stay_kernel):
        """Verify a deterministic chain has zero standard error."""
        from robust_mdp_lab.mdp_core import Policy, simulate_returns

        mean, stderr = simulate_returns(two_state_mdp, Policy.deterministic([0, 0], 2), stay_kernel,
                                        num_trajectories=100, horizon=40)
        assert mean == pytest.approx(2.0 * (1 - 0.5 ** 40))
        assert stderr == 0.0

    @pytest.mark.slow
    def test_monte_carlo_agrees_with_exact(self):
        """Verify the sample mean lies within five standard errors of mu^T v."""
        from robust_mdp_lab.mdp_core import evaluate_exact, simulate_returns

        mdp, kernel, policy = random_mdp(31, discount=0.5)
        exact = evaluate_exact(mdp, policy, kernel).weighted(mdp.initial_dist)
        mean, stderr = simulate_returns(mdp, policy, kernel, num_trajectories=20_000, seed=3)
        assert math.isfinite(stderr) and stderr > 0
        assert abs(mean - exact) <= 5 * stderr + 1e-6
