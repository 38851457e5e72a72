"""
Robust Bellman operators and their fixed points.

Operators (v is a value vector, targets r[s][a][s'] + gamma v[s']):
- T^pi:     out[s] = min over the state marginal of sum_a pi[s][a] P[s][a].targets[s][a]
- T_hat^pi: out[s] = sum_a pi[s][a] min over the pair marginal of P[s][a].targets[s][a]
- T:        out[s] = value of the matrix game (actions x state-marginal vertices)

T^pi and T depend on the set only through its state marginals (they are
the operators of the s-rectangular extension); T_hat^pi only through the
pair marginals. Fixed points are found by value iteration from v_0 = 0.
"""
import enum
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    InvariantViolation,
    VerificationError,
)
from .matrix_game import MatrixGame, solve_matrix_game
from .mdp_core import (
    MdpInstance,
    Policy,
    ValueKind,
    ValueVector,
    as_values,
    check_shapes,
)
from .uncertainty_models import (
    DEFAULT_ENUMERATION_CAP,
    UncertaintySet,
    marginal_stack_s,
    min_linear_s,
    min_linear_sa,
)

logger = logging.getLogger(__name__)


DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10**6
PROGRESS_EVERY = 1000
SUBFIXED_SLACK = 1e-12


class OperatorTag(enum.Enum):
    T_PI = "T_pi"
    T_HAT_PI = "T_hat_pi"
    T_OPT = "T_opt"


_KIND = {
    OperatorTag.T_PI: ValueKind.FIXED_POINT_S,
    OperatorTag.T_HAT_PI: ValueKind.FIXED_POINT_SA,
    OperatorTag.T_OPT: ValueKind.FIXED_POINT_OPT,
}


@dataclass(frozen=True, eq=False)
class FixedPointReport:
    """
    Outcome of value iteration.

    Attributes:
        value: Final iterate
        iterations: Number of operator applications
        final_residual: ||v_k - v_{k-1}||_inf at the last step (0 when gamma = 0)
        tolerance_target: Stopping threshold tol (1 - gamma) / (2 gamma)
        operator: Which operator was iterated
        policy: Greedy policy of the last T application (T_opt only)
    """
    value: ValueVector
    iterations: int
    final_residual: float
    tolerance_target: float
    operator: OperatorTag
    policy: Optional[Policy] = None

    @property
    def converged(self) -> bool:
        return self.final_residual <= self.tolerance_target


def _check(mdp: MdpInstance, uset: UncertaintySet, policy: Optional[Policy] = None, v=None) -> None:
    check_shapes(mdp, policy=policy, values=v)
    if (uset.num_states, uset.num_actions) != (mdp.num_states, mdp.num_actions):
        raise DimensionMismatchError(
            f"uncertainty set is {uset.num_states}x{uset.num_actions}, "
            f"MDP is {mdp.num_states}x{mdp.num_actions}"
        )


def _targets(mdp: MdpInstance, v: np.ndarray) -> np.ndarray:
    return mdp.rewards + mdp.discount * v[None, None, :]


def apply_T_pi(mdp: MdpInstance, uset: UncertaintySet, policy: Policy, v,
               cap: int = DEFAULT_ENUMERATION_CAP) -> ValueVector:
    """Robust policy operator over the s-extension; residual is ||T^pi(v) - v||_inf."""
    _check(mdp, uset, policy, v)
    v = as_values(v)
    targets = _targets(mdp, v)
    out = np.empty(mdp.num_states)
    for s in range(mdp.num_states):
        objective = policy.action_probs[s][:, None] * targets[s]
        out[s] = min_linear_s(uset, s, objective, cap=cap, all_argmins=False).value
    return ValueVector(out, ValueKind.FIXED_POINT_S, float(np.max(np.abs(out - v))))


def apply_T_hat_pi(mdp: MdpInstance, uset: UncertaintySet, policy: Policy, v,
                   cap: int = DEFAULT_ENUMERATION_CAP) -> ValueVector:
    """Robust policy operator over the sa-extension (independent per-pair minima)."""
    _check(mdp, uset, policy, v)
    v = as_values(v)
    targets = _targets(mdp, v)
    out = np.zeros(mdp.num_states)
    for s in range(mdp.num_states):
        for a in range(mdp.num_actions):
            weight = policy.action_probs[s, a]
            if weight > 0.0:
                out[s] += weight * min_linear_sa(uset, s, a, targets[s, a], cap=cap, all_argmins=False).value
    return ValueVector(out, ValueKind.FIXED_POINT_SA, float(np.max(np.abs(out - v))))


def apply_T_opt(mdp: MdpInstance, uset: UncertaintySet, v,
                cap: int = DEFAULT_ENUMERATION_CAP) -> Tuple[ValueVector, Policy]:
    """
    Optimal robust operator T.

    Each state solves the game with rows = actions, columns = state-marginal
    vertices and payoff[a][k] = P_k[a].(r[s][a] + gamma v).

    Returns:
        (T(v), maximizing row strategies as a policy)
    """
    _check(mdp, uset, v=v)
    v = as_values(v)
    targets = _targets(mdp, v)
    out = np.empty(mdp.num_states)
    strategies = np.zeros((mdp.num_states, mdp.num_actions))
    for s in range(mdp.num_states):
        blocks = marginal_stack_s(uset, s, cap)
        payoff = np.einsum('kat,at->ak', blocks, targets[s])
        if mdp.num_actions == 1:
            out[s] = float(payoff.min())
            strategies[s, 0] = 1.0
            continue
        solution = solve_matrix_game(MatrixGame(payoff))
        out[s] = solution.value
        strategies[s] = solution.row_strategy
    return ValueVector(out, ValueKind.FIXED_POINT_OPT, float(np.max(np.abs(out - v)))), Policy(strategies)


def fixed_point(operator: Union[OperatorTag, str], mdp: MdpInstance, uset: UncertaintySet,
                policy: Optional[Policy] = None, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER,
                cap: int = DEFAULT_ENUMERATION_CAP) -> FixedPointReport:
    """
    Value iteration v_{k+1} = Op(v_k) from v_0 = 0.

    Stops when ||v_{k+1} - v_k||_inf <= tol (1 - gamma) / (2 gamma), which puts
    the returned iterate within tol of the fixed point; gamma = 0 takes one step.

    Raises:
        ValueError: On tol <= 0 or a missing policy for T_pi / T_hat_pi
        ConvergenceError: If max_iter is reached first
    """
    tag = OperatorTag(operator)
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if tag is not OperatorTag.T_OPT and policy is None:
        raise ValueError(f"{tag.value} needs a policy")
    _check(mdp, uset, policy)

    gamma = mdp.discount
    target = tol * (1.0 - gamma) / (2.0 * gamma) if gamma > 0 else tol
    v = np.zeros(mdp.num_states)
    greedy = None

    for iteration in range(1, max_iter + 1):
        if tag is OperatorTag.T_PI:
            image = apply_T_pi(mdp, uset, policy, v, cap)
        elif tag is OperatorTag.T_HAT_PI:
            image = apply_T_hat_pi(mdp, uset, policy, v, cap)
        else:
            image, greedy = apply_T_opt(mdp, uset, v, cap)
        residual = image.residual
        v = image.values

        if gamma == 0.0:
            residual = 0.0
            break
        if residual <= target:
            break
        if iteration % PROGRESS_EVERY == 0:
            logger.debug(f"{tag.value}: iteration {iteration}, step {residual:.3e} (target {target:.3e})")
    else:
        raise ConvergenceError(
            f"{tag.value} value iteration did not reach {target:.3e} within {max_iter} iterations "
            f"(last step {residual:.3e}, gamma={gamma})"
        )

    logger.info(f"{tag.value} fixed point after {iteration} iteration(s), residual {residual:.2e}")
    return FixedPointReport(
        value=ValueVector(v, _KIND[tag], residual),
        iterations=iteration,
        final_residual=residual,
        tolerance_target=target,
        operator=tag,
        policy=greedy,
    )


def extract_greedy_policy(mdp: MdpInstance, uset: UncertaintySet, u_star,
                          tol: float = DEFAULT_TOL,
                          cap: int = DEFAULT_ENUMERATION_CAP) -> Policy:
    """
    Maximizing policy of T at u*, checked against its own robust value.

    Raises:
        VerificationError: If ||T^pi*(u*) - u*|| or ||u^pi* - u*|| exceeds 10 tol
            (a numerically ambiguous game)
    """
    u_star = as_values(u_star)
    _, policy = apply_T_opt(mdp, uset, u_star, cap)

    image = apply_T_pi(mdp, uset, policy, u_star, cap)
    if image.residual > 10 * tol:
        raise VerificationError(f"greedy policy leaves residual {image.residual:.3e} at u* (limit {10 * tol:.1e})")

    report = fixed_point(OperatorTag.T_PI, mdp, uset, policy, tol=tol, cap=cap)
    distance = report.value.sup_distance(u_star)
    if distance > 10 * tol:
        raise VerificationError(f"robust value of the greedy policy is {distance:.3e} away from u*")
    return policy


def solve_robust_mdp(mdp: MdpInstance, uset: UncertaintySet, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER,
                     cap: int = DEFAULT_ENUMERATION_CAP) -> Tuple[ValueVector, Policy, FixedPointReport]:
    """u* = fixed point of T and the verified greedy policy pi*."""
    report = fixed_point(OperatorTag.T_OPT, mdp, uset, tol=tol, max_iter=max_iter, cap=cap)
    policy = extract_greedy_policy(mdp, uset, report.value, tol=tol, cap=cap)
    return report.value, policy, report


def check_subfixed_dominated(mdp: MdpInstance, uset: UncertaintySet, policy: Policy, v,
                             tol: float = DEFAULT_TOL,
                             cap: int = DEFAULT_ENUMERATION_CAP) -> bool:
    """
    If v <= T^pi(v), assert v <= u^pi (within 10 tol) and return True.

    Returns False, without asserting anything, when v is not sub-fixed.

    Raises:
        InvariantViolation: A sub-fixed v exceeds u^pi (operator bug)
    """
    v = as_values(v)
    image = apply_T_pi(mdp, uset, policy, v, cap).values
    if np.any(v > image + SUBFIXED_SLACK):
        return False

    u_pi = fixed_point(OperatorTag.T_PI, mdp, uset, policy, tol=tol, cap=cap).value.values
    excess = float(np.max(v - u_pi))
    if excess > 10 * tol:
        raise InvariantViolation(f"sub-fixed vector exceeds u^pi by {excess:.3e}")
    return True
