"""
Exact MDP machinery for a fixed transition kernel.

This module owns the data types every other module passes around
(MdpInstance, TransitionKernel, Policy, ValueVector) and the exact,
non-robust computations on top of them:

- evaluate_exact: v^{pi,P} from a dense LU solve of (I - gamma P_pi) v = r_pi
- apply_T_pi_P: one application of the policy-fixed Bellman operator
- solve_mdp_exact: Howard policy iteration for a single kernel
- evaluate_many / optimal_values_many: batched variants used by the grid oracles

Conventions:
- rewards are indexed r[s][a][s'] even when they ignore s'
- kernels are P[s][a][s'] and policies pi[s][a]
- every array stored on a type is a read-only float64 copy
"""
import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    InvalidInstanceError,
    NumericalError,
)

logger = logging.getLogger(__name__)


STOCHASTIC_TOL = 1e-12
ASSUMPTION_1_TOL = 1e-12
EVALUATION_RESIDUAL_TOL = 1e-10
REFINEMENT_STEPS = 2
IMPROVEMENT_TOL = 1e-12
DEFAULT_POLICY_ITERATIONS = 10_000


def frozen_array(values, name: str) -> np.ndarray:
    """Copy ``values`` into a read-only float64 array, rejecting NaN/Inf."""
    arr = np.array(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInstanceError(f"{name} contains NaN or infinite entries")
    arr.setflags(write=False)
    return arr


def check_distribution_rows(arr: np.ndarray, name: str, tol: float = STOCHASTIC_TOL) -> None:
    """
    Check that every row along the last axis is a probability vector.

    Rows are never renormalized; a violation is a construction error.

    Raises:
        InvalidInstanceError: On a negative entry or a row sum off by more than tol
    """
    if arr.size == 0:
        raise InvalidInstanceError(f"{name} is empty")
    if np.min(arr) < -tol:
        raise InvalidInstanceError(f"{name} has a negative entry ({np.min(arr):.3e})")
    deviation = float(np.max(np.abs(arr.sum(axis=-1) - 1.0)))
    if deviation > tol:
        raise InvalidInstanceError(
            f"{name} rows must sum to 1 within {tol:g} (worst deviation {deviation:.3e})"
        )


@dataclass(frozen=True, eq=False)
class MdpInstance:
    """
    Everything of a robust MDP except its uncertainty set.

    Attributes:
        rewards: Reward tensor r[s][a][s'], shape (S, A, S)
        discount: Discount factor gamma in [0, 1)
        initial_dist: Initial distribution mu over states, shape (S,)
    """
    rewards: np.ndarray
    discount: float
    initial_dist: np.ndarray

    def __post_init__(self):
        rewards = frozen_array(self.rewards, "rewards")
        if rewards.ndim != 3 or rewards.shape[0] != rewards.shape[2] or 0 in rewards.shape:
            raise DimensionMismatchError(f"rewards must have shape (S, A, S), got {rewards.shape}")

        discount = float(self.discount)
        if not 0.0 <= discount < 1.0:
            raise InvalidInstanceError(f"discount must lie in [0, 1), got {discount}")

        mu = frozen_array(self.initial_dist, "initial_dist")
        if mu.shape != (rewards.shape[0],):
            raise DimensionMismatchError(
                f"initial_dist has shape {mu.shape}, expected ({rewards.shape[0]},)"
            )
        check_distribution_rows(mu, "initial_dist")

        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "discount", discount)
        object.__setattr__(self, "initial_dist", mu)

    @property
    def num_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_actions(self) -> int:
        return self.rewards.shape[1]

    @property
    def max_abs_reward(self) -> float:
        return float(np.max(np.abs(self.rewards)))

    def value_bound(self) -> float:
        """max|r| / (1 - gamma), the sup-norm bound on every value function."""
        return self.max_abs_reward / (1.0 - self.discount)

    def is_next_state_independent(self, tol: float = ASSUMPTION_1_TOL) -> bool:
        """True when r[s][a][s'] does not depend on s' (within tol)."""
        spread = self.rewards.max(axis=2) - self.rewards.min(axis=2)
        return bool(np.all(spread <= tol))

    def with_initial_dist(self, mu) -> "MdpInstance":
        return replace(self, initial_dist=mu)

    def point_mass(self, state: int) -> np.ndarray:
        if not 0 <= state < self.num_states:
            raise DimensionMismatchError(f"state {state} out of range for {self.num_states} states")
        mu = np.zeros(self.num_states)
        mu[state] = 1.0
        return mu


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """A single element P of an uncertainty set: P[s][a] is a distribution over next states."""
    probs: np.ndarray

    def __post_init__(self):
        probs = frozen_array(self.probs, "kernel")
        if probs.ndim != 3 or probs.shape[0] != probs.shape[2] or 0 in probs.shape:
            raise DimensionMismatchError(f"kernel must have shape (S, A, S), got {probs.shape}")
        check_distribution_rows(probs, "kernel")
        object.__setattr__(self, "probs", probs)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    def block(self, state: int) -> np.ndarray:
        """The A x S block of rows leaving ``state``."""
        return self.probs[state]

    def allclose(self, other: "TransitionKernel", tol: float = 1e-9) -> bool:
        return (self.probs.shape == other.probs.shape
                and float(np.max(np.abs(self.probs - other.probs))) <= tol)


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary randomized policy, one distribution over actions per state."""
    action_probs: np.ndarray

    def __post_init__(self):
        probs = frozen_array(self.action_probs, "policy")
        if probs.ndim != 2 or 0 in probs.shape:
            raise DimensionMismatchError(f"policy must have shape (S, A), got {probs.shape}")
        check_distribution_rows(probs, "policy")
        object.__setattr__(self, "action_probs", probs)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions: Sequence[int], num_actions: int) -> "Policy":
        probs = np.zeros((len(actions), num_actions))
        probs[np.arange(len(actions)), np.asarray(actions, dtype=int)] = 1.0
        return cls(probs)

    @property
    def num_states(self) -> int:
        return self.action_probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.action_probs.shape[1]

    def is_deterministic(self, tol: float = 1e-9) -> bool:
        return bool(np.all(self.action_probs.max(axis=1) >= 1.0 - tol))


class ValueKind(enum.Enum):
    """Which defining equation a ValueVector satisfies."""
    EXACT = "exact"
    FIXED_POINT_S = "fixed_point_s"
    FIXED_POINT_SA = "fixed_point_sa"
    FIXED_POINT_OPT = "fixed_point_opt"
    FINITE_HORIZON = "finite_horizon"


@dataclass(frozen=True, eq=False)
class ValueVector:
    """
    One real per state, tagged with the operator it belongs to.

    Attributes:
        values: v[s], shape (S,)
        kind: Defining equation (exact evaluation or one of the robust fixed points)
        residual: Sup-norm residual of the defining equation (>= 0)
    """
    values: np.ndarray
    kind: ValueKind = ValueKind.EXACT
    residual: float = 0.0

    def __post_init__(self):
        values = frozen_array(self.values, "value vector")
        if values.ndim != 1:
            raise DimensionMismatchError(f"value vector must be 1-D, got shape {values.shape}")
        residual = float(self.residual)
        if not residual >= 0.0:
            raise InvalidInstanceError(f"residual must be >= 0, got {residual}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "residual", residual)

    def weighted(self, mu) -> float:
        """mu^T v."""
        return float(np.dot(np.asarray(mu, dtype=float), self.values))

    def sup_distance(self, other: Union["ValueVector", np.ndarray]) -> float:
        return float(np.max(np.abs(self.values - as_values(other))))


def as_values(v: Union[ValueVector, np.ndarray, Sequence[float]]) -> np.ndarray:
    """Plain array view of a ValueVector or array-like."""
    if isinstance(v, ValueVector):
        return v.values
    return np.asarray(v, dtype=float)


def check_shapes(mdp: MdpInstance, policy: Optional[Policy] = None,
                 kernel: Optional[TransitionKernel] = None, values=None) -> None:
    """
    Raise DimensionMismatchError unless every given object fits the MDP.
    """
    S, A = mdp.num_states, mdp.num_actions
    if policy is not None and policy.action_probs.shape != (S, A):
        raise DimensionMismatchError(
            f"policy has shape {policy.action_probs.shape}, MDP needs ({S}, {A})"
        )
    if kernel is not None and kernel.probs.shape != (S, A, S):
        raise DimensionMismatchError(f"kernel has shape {kernel.probs.shape}, MDP needs ({S}, {A}, {S})")
    if values is not None and as_values(values).shape != (S,):
        raise DimensionMismatchError(f"value vector has shape {as_values(values).shape}, MDP needs ({S},)")


def policy_transition_matrix(policy: Policy, kernel: TransitionKernel) -> np.ndarray:
    """P_pi[s][s'] = sum_a pi[s][a] P[s][a][s']."""
    return np.einsum('sa,sat->st', policy.action_probs, kernel.probs)


def expected_rewards(mdp: MdpInstance, policy: Policy, kernel: TransitionKernel) -> np.ndarray:
    """r_pi[s] = sum_a pi[s][a] sum_s' P[s][a][s'] r[s][a][s']."""
    return np.einsum('sa,sat,sat->s', policy.action_probs, kernel.probs, mdp.rewards)


def apply_T_pi_P(mdp: MdpInstance, policy: Policy, kernel: TransitionKernel, v) -> ValueVector:
    """
    One application of T^{pi,P}: out[s] = sum_a pi[s][a] P[s][a] . (r[s][a] + gamma v).

    The returned residual is ||out - v||_inf.
    """
    check_shapes(mdp, policy=policy, kernel=kernel, values=v)
    v = as_values(v)
    targets = mdp.rewards + mdp.discount * v[None, None, :]
    out = np.einsum('sa,sat,sat->s', policy.action_probs, kernel.probs, targets)
    return ValueVector(out, ValueKind.EXACT, float(np.max(np.abs(out - v))))


def evaluate_exact(mdp: MdpInstance, policy: Policy, kernel: TransitionKernel) -> ValueVector:
    """
    Exact value v^{pi,P}, the unique solution of v = T^{pi,P}(v).

    Solved by dense LU factorization of I - gamma P_pi.

    Raises:
        DimensionMismatchError: If shapes are inconsistent
        NumericalError: If the system is singular or the residual check fails

    Examples:
        >>> mdp = MdpInstance(np.ones((1, 1, 1)), 0.5, [1.0])
        >>> evaluate_exact(mdp, Policy.uniform(1, 1), TransitionKernel(np.ones((1, 1, 1)))).values
        array([2.])
    """
    check_shapes(mdp, policy=policy, kernel=kernel)
    system = np.eye(mdp.num_states) - mdp.discount * policy_transition_matrix(policy, kernel)
    rhs = expected_rewards(mdp, policy, kernel)
    try:
        factors = linalg.lu_factor(system)
        values = linalg.lu_solve(factors, rhs)
    except (linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"policy evaluation system could not be solved: {e}") from e
    if not np.all(np.isfinite(values)):
        raise NumericalError("policy evaluation system is singular")

    residual = apply_T_pi_P(mdp, policy, kernel, values).residual
    for _ in range(REFINEMENT_STEPS):
        if residual <= EVALUATION_RESIDUAL_TOL:
            break
        values = values + linalg.lu_solve(factors, rhs - system @ values)
        residual = apply_T_pi_P(mdp, policy, kernel, values).residual
    if residual > EVALUATION_RESIDUAL_TOL:
        raise NumericalError(f"exact evaluation residual {residual:.3e} exceeds {EVALUATION_RESIDUAL_TOL:g}")
    return ValueVector(values, ValueKind.EXACT, residual)


def evaluate_many(mdp: MdpInstance, action_probs: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """
    Exact values of one policy under a batch of kernels.

    Args:
        mdp: The MDP
        action_probs: pi[s][a], shape (S, A)
        kernels: Stacked kernels, shape (N, S, A, S)

    Returns:
        Array of shape (N, S) with v^{pi,P_n} in row n
    """
    kernels = np.asarray(kernels, dtype=float)
    S = mdp.num_states
    p_pi = np.einsum('sa,nsat->nst', action_probs, kernels)
    r_pi = np.einsum('sa,nsat,sat->ns', action_probs, kernels, mdp.rewards)
    systems = np.eye(S)[None, :, :] - mdp.discount * p_pi
    try:
        return np.linalg.solve(systems, r_pi[..., None])[..., 0]
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"batched policy evaluation failed: {e}") from e


def bellman_optimality_residual(mdp: MdpInstance, kernel: TransitionKernel, v) -> float:
    """||max_a P[s][a] . (r[s][a] + gamma v) - v||_inf for a single kernel."""
    check_shapes(mdp, kernel=kernel, values=v)
    v = as_values(v)
    q = np.einsum('sat,sat->sa', kernel.probs, mdp.rewards + mdp.discount * v[None, None, :])
    return float(np.max(np.abs(q.max(axis=1) - v)))


def solve_mdp_exact(mdp: MdpInstance, kernel: TransitionKernel,
                    max_iter: int = DEFAULT_POLICY_ITERATIONS) -> Tuple[Policy, ValueVector]:
    """
    Optimal deterministic policy and value of the ordinary MDP with kernel P.

    Howard policy iteration: exact evaluation, then switch a state to the
    lowest-index greedy action only when it improves by more than 1e-12.
    The returned value carries the Bellman optimality residual.
    """
    check_shapes(mdp, kernel=kernel)
    S, A = mdp.num_states, mdp.num_actions
    immediate = np.einsum('sat,sat->sa', kernel.probs, mdp.rewards)
    actions = np.zeros(S, dtype=int)

    for iteration in range(1, max_iter + 1):
        policy = Policy.deterministic(actions, A)
        values = evaluate_exact(mdp, policy, kernel).values
        q = immediate + mdp.discount * (kernel.probs @ values)
        improve = q[np.arange(S), actions] < q.max(axis=1) - IMPROVEMENT_TOL
        if not improve.any():
            residual = bellman_optimality_residual(mdp, kernel, values)
            logger.debug(f"policy iteration converged after {iteration} step(s), residual {residual:.2e}")
            return policy, ValueVector(values, ValueKind.EXACT, residual)
        actions = np.where(improve, np.argmax(q, axis=1), actions)

    raise ConvergenceError(f"policy iteration did not stabilise within {max_iter} steps")


def optimal_values_many(mdp: MdpInstance, kernels: np.ndarray,
                        max_iter: int = DEFAULT_POLICY_ITERATIONS) -> np.ndarray:
    """
    Optimal values for a batch of kernels, shape (N, S).

    Vectorised policy iteration with the same improvement rule as solve_mdp_exact.
    """
    kernels = np.asarray(kernels, dtype=float)
    N = kernels.shape[0]
    S = mdp.num_states
    immediate = np.einsum('nsat,sat->nsa', kernels, mdp.rewards)
    actions = np.zeros((N, S), dtype=int)
    rows = np.arange(N)[:, None]
    cols = np.arange(S)[None, :]
    identity = np.eye(S)[None, :, :]

    for _ in range(max_iter):
        chosen = kernels[rows, cols, actions]
        rhs = immediate[rows, cols, actions]
        values = np.linalg.solve(identity - mdp.discount * chosen, rhs[..., None])[..., 0]
        q = immediate + mdp.discount * np.einsum('nsat,nt->nsa', kernels, values)
        improve = q[rows, cols, actions] < q.max(axis=2) - IMPROVEMENT_TOL
        if not improve.any():
            return values
        actions = np.where(improve, np.argmax(q, axis=2), actions)

    raise ConvergenceError(f"batched policy iteration did not stabilise within {max_iter} steps")


def default_horizon(discount: float, accuracy: float = 1e-8) -> int:
    """Smallest H with gamma^H <= accuracy (1 when gamma = 0)."""
    if discount <= 0.0:
        return 1
    return max(1, math.ceil(math.log(accuracy) / math.log(discount)))


def simulate_returns(mdp: MdpInstance, policy: Policy, kernel: TransitionKernel,
                     num_trajectories: int = 100_000, horizon: Optional[int] = None,
                     seed: int = 0) -> Tuple[float, float]:
    """
    Monte-Carlo estimate of mu^T v^{pi,P}.

    Simulates ``num_trajectories`` discounted trajectories from mu, truncated
    at ``horizon`` (default: gamma^H <= 1e-8).

    Returns:
        (mean return, standard error of the mean)
    """
    check_shapes(mdp, policy=policy, kernel=kernel)
    if num_trajectories < 2:
        raise InvalidInstanceError("need at least two trajectories for a standard error")
    horizon = default_horizon(mdp.discount) if horizon is None else horizon
    rng = np.random.default_rng(seed)
    S, A = mdp.num_states, mdp.num_actions

    policy_cdf = np.cumsum(policy.action_probs, axis=1)
    kernel_cdf = np.cumsum(kernel.probs, axis=2)
    states = rng.choice(S, size=num_trajectories, p=mdp.initial_dist)
    totals = np.zeros(num_trajectories)
    weight = 1.0

    for _ in range(horizon):
        draws = rng.random(num_trajectories)
        actions = np.minimum((draws[:, None] > policy_cdf[states]).sum(axis=1), A - 1)
        draws = rng.random(num_trajectories)
        next_states = np.minimum((draws[:, None] > kernel_cdf[states, actions]).sum(axis=1), S - 1)
        totals += weight * mdp.rewards[states, actions, next_states]
        weight *= mdp.discount
        states = next_states

    return float(totals.mean()), float(totals.std(ddof=1) / math.sqrt(num_trajectories))
