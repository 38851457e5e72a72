"""
Brute-force ground truth for the fast operators.

The adversary's problem min_P mu^T v^{pi,P} is solved without dynamic
programming: exactly on the kernel list of an ExplicitFinite set, and by a
grid over a ParamSet followed by cyclic golden-section refinement around
the best grid point everywhere else. The objective is not convex in P, so
interior worst cases are expected and vertex checks alone are not enough.

Refinement only ever replaces the incumbent by a strictly better point,
so the reported minimum is monotone in the work done, and grid ties go to
the lowest flat index.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import BudgetExceededError, DimensionMismatchError, InvalidInstanceError
from .mdp_core import (
    MdpInstance,
    Policy,
    ValueKind,
    ValueVector,
    check_shapes,
    evaluate_exact,
    evaluate_many,
    optimal_values_many,
    solve_mdp_exact,
)
from .param_sets import ParamSet, as_param_set, stick_breaking_weights, underlying_set
from .robust_bellman import (
    DEFAULT_TOL,
    OperatorTag,
    apply_T_pi,
    fixed_point,
    solve_robust_mdp,
)
from .ssp_checker import ObjectiveTensor, SspMode, check_strong_ssp_s, check_strong_ssp_sa, structural_guarantee
from .uncertainty_models import (
    DEFAULT_ENUMERATION_CAP,
    ExplicitFinite,
    UncertaintySet,
    iter_vertex_batches,
    marginal_s,
    vertex_stack,
)

logger = logging.getLogger(__name__)


ORACLE_TOL = 1e-5
GAP_THRESHOLD = 1e-4
REFINEMENT_WIDTH = 1e-6
GRID_BUDGET = 10**7
POLICY_GRID_BUDGET = 10**6
DEFAULT_POLICY_GRID_RESOLUTION = 11
DOMINANCE_STARTS = 10
MAX_SWEEPS = 50
GRID_BATCH = 4096
CACHE_ENTRIES = 2**23

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

Source = Union[UncertaintySet, ParamSet]


@dataclass(frozen=True)
class Comparison:
    """One fast-path quantity checked against its oracle counterpart."""
    quantity: str
    fast_value: float
    oracle_value: float
    tolerance: float
    difference: float
    passed: bool

    @classmethod
    def within(cls, quantity: str, fast_value: float, oracle_value: float,
               tolerance: float = ORACLE_TOL) -> "Comparison":
        difference = float(fast_value) - float(oracle_value)
        return cls(quantity, float(fast_value), float(oracle_value), tolerance, difference,
                   abs(difference) <= tolerance)

    @classmethod
    def at_least(cls, quantity: str, fast_value: float, oracle_value: float,
                 tolerance: float = ORACLE_TOL) -> "Comparison":
        """Passes when fast_value >= oracle_value - tolerance."""
        difference = float(fast_value) - float(oracle_value)
        return cls(quantity, float(fast_value), float(oracle_value), tolerance, difference,
                   difference >= -tolerance)

    def to_dict(self) -> Dict:
        return {
            'quantity': self.quantity,
            'fast_value': self.fast_value,
            'oracle_value': self.oracle_value,
            'difference': self.difference,
            'tolerance': self.tolerance,
            'passed': self.passed,
        }


@dataclass(frozen=True, eq=False)
class OracleReport:
    """
    Result of an oracle run.

    Attributes:
        min_value: The optimized quantity (a worst case, a max-min value or a gap)
        argmin_params: Worst-case parameter vector (ParamSets)
        argmin_index: Worst-case vertex index (ExplicitFinite sets)
        refinement_width: Width of the last refinement bracket; exact runs
            report the nominal width
        comparisons: Fast-path checks performed along the way
        maximizing_policy: Best policy found (max-min runs)
        parameter_names: Names matching argmin_params
        grid_points: Adversary points evaluated on the coarse grid
        exact: True when the adversary was searched exhaustively over a finite set
        details: Run-specific extras (cross values, both sides of a gap, ...)
    """
    min_value: float
    argmin_params: Optional[np.ndarray] = None
    argmin_index: Optional[int] = None
    refinement_width: float = REFINEMENT_WIDTH
    comparisons: Tuple[Comparison, ...] = ()
    maximizing_policy: Optional[Policy] = None
    parameter_names: Tuple[str, ...] = ()
    grid_points: int = 0
    exact: bool = False
    details: Dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.comparisons)

    def param(self, name: str) -> float:
        if self.argmin_params is None or name not in self.parameter_names:
            raise KeyError(f"no parameter named {name!r} in this report")
        return float(self.argmin_params[self.parameter_names.index(name)])

    def to_dict(self) -> Dict:
        return {
            'min_value': self.min_value,
            'argmin_params': (None if self.argmin_params is None
                              else dict(zip(self.parameter_names, self.argmin_params.tolist()))),
            'argmin_index': self.argmin_index,
            'refinement_width': self.refinement_width,
            'grid_points': self.grid_points,
            'exact': self.exact,
            'maximizing_policy': (None if self.maximizing_policy is None
                                  else self.maximizing_policy.action_probs.tolist()),
            'comparisons': [c.to_dict() for c in self.comparisons],
            'passed': self.passed,
            'details': self.details,
        }


@dataclass(frozen=True, eq=False)
class GapSearchResult:
    """Outcome of search_sa_gap; ``instance`` is the first instance over the threshold."""
    found: bool
    trials: int
    gap: float
    fast_value: float
    oracle_value: float
    instance: Optional[object] = None
    policy: Optional[Policy] = None


# ---------------------------------------------------------------------------
# Search primitives
# ---------------------------------------------------------------------------

def golden_section(f: Callable[[float], float], low: float, high: float,
                   width: float = REFINEMENT_WIDTH) -> Tuple[float, float, float]:
    """
    Minimize a scalar function on [low, high] down to a bracket of ``width``.

    Returns:
        (best point seen, its value, final bracket width)
    """
    a, b = float(low), float(high)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > width:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    if fc <= fd:
        return c, fc, b - a
    return d, fd, b - a


def refine_coordinates(f: Callable[[np.ndarray], float], start: np.ndarray, start_value: float,
                       lows: np.ndarray, highs: np.ndarray, half_widths: np.ndarray,
                       width: float = REFINEMENT_WIDTH) -> Tuple[np.ndarray, float, float]:
    """
    Cyclic golden-section descent inside a box around ``start``.

    Each sweep searches every coordinate in [x_i - h_i, x_i + h_i] clipped to
    the bounds; a candidate replaces the incumbent only when strictly better.
    Sweeps stop once a full sweep brings no improvement.

    Returns:
        (best point, best value, largest bracket width of the last sweep)
    """
    x = np.array(start, dtype=float)
    best = float(start_value)
    last_width = width

    for sweep in range(MAX_SWEEPS):
        improved = False
        last_width = np.finfo(float).eps
        for i in range(x.shape[0]):
            low = max(lows[i], x[i] - half_widths[i])
            high = min(highs[i], x[i] + half_widths[i])
            if high <= low:
                continue

            def along(t, i=i):
                y = x.copy()
                y[i] = t
                return f(y)

            candidate, value, bracket = golden_section(along, low, high, width)
            last_width = max(last_width, bracket)
            if value < best:
                x[i] = candidate
                best = value
                improved = True
        logger.debug(f"refinement sweep {sweep}: best {best:.12g}")
        if not improved:
            break
    return x, best, last_width


def _check_policy(mdp: MdpInstance, policy: Policy) -> None:
    check_shapes(mdp, policy=policy)


def _check_source(mdp: MdpInstance, source: Source) -> None:
    if (source.num_states, source.num_actions) != (mdp.num_states, mdp.num_actions):
        raise DimensionMismatchError(
            f"uncertainty set is {source.num_states}x{source.num_actions}, "
            f"MDP is {mdp.num_states}x{mdp.num_actions}"
        )


class Adversary:
    """
    Candidate kernels of the oracles: a finite list or a parameter grid.

    Grid kernels are cached when they fit in CACHE_ENTRIES floats, so a
    policy search re-evaluates the same stack instead of rebuilding it.
    """

    def __init__(self, mdp: MdpInstance, source: Source, grid_resolution: Optional[int] = None,
                 budget: int = GRID_BUDGET, cap: int = DEFAULT_ENUMERATION_CAP):
        _check_source(mdp, source)
        self.mdp = mdp
        self.exact = isinstance(source, ExplicitFinite)
        self.params: Optional[ParamSet] = None
        self._cache: Optional[np.ndarray] = None

        if self.exact:
            self._cache = vertex_stack(source, cap)
            self.size = self._cache.shape[0]
        else:
            params = as_param_set(source, grid_resolution)
            if grid_resolution is not None and params.grid_resolution != grid_resolution:
                params = _with_resolution(params, grid_resolution)
            self.params = params
            self.size = params.grid_size()
            if self.size > budget:
                raise BudgetExceededError(
                    f"adversary grid of {self.size} points exceeds the budget of {budget}",
                    requested=self.size, limit=budget,
                )
            entries = self.size * mdp.num_states ** 2 * mdp.num_actions
            if entries <= CACHE_ENTRIES:
                self._cache = params.kernels_at(params.grid_points(np.arange(self.size)))
        logger.debug(f"adversary with {self.size} candidate kernel(s), exact={self.exact}")

    @property
    def names(self) -> Tuple[str, ...]:
        return () if self.params is None else self.params.names

    def batches(self) -> Iterator[Tuple[int, np.ndarray]]:
        if self._cache is not None:
            for start in range(0, self.size, GRID_BATCH):
                yield start, self._cache[start:start + GRID_BATCH]
            return
        for start, thetas in self.params.iter_grid(GRID_BATCH):
            yield start, self.params.kernels_at(thetas)

    def scan(self, score: Callable[[np.ndarray], np.ndarray]) -> Tuple[int, float]:
        """Lowest-index minimizer of a batched score over all candidates."""
        best_index, best_value = -1, math.inf
        for start, kernels in self.batches():
            values = score(kernels)
            k = int(np.argmin(values))
            if values[k] < best_value:
                best_index, best_value = start + k, float(values[k])
        return best_index, best_value

    def policy_scores(self, action_probs: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        mu = self.mdp.initial_dist
        return lambda kernels: evaluate_many(self.mdp, action_probs, kernels) @ mu

    def theta(self, index: int) -> Optional[np.ndarray]:
        if self.params is None:
            return None
        return self.params.grid_points(np.array([index]))[0]

    def refine(self, point_score: Callable[[np.ndarray], float], index: int, value: float,
               width: float) -> Tuple[Optional[np.ndarray], float, float]:
        """Golden-section refinement around grid point ``index`` (no-op for exact sets)."""
        if self.params is None:
            return None, value, width
        theta = self.theta(index)
        if self.params.num_parameters == 0:
            return theta, value, width
        half = self.params.grid_step()
        return refine_coordinates(point_score, theta, value, self.params.lows, self.params.highs, half, width)

    def worst_case(self, action_probs: np.ndarray, width: float = REFINEMENT_WIDTH) -> OracleReport:
        index, value = self.scan(self.policy_scores(action_probs))
        if self.exact:
            return OracleReport(value, argmin_index=index, grid_points=self.size, exact=True)

        mu = self.mdp.initial_dist

        def point_score(theta):
            kernels = self.params.kernels_at(np.asarray(theta)[None])
            return float(evaluate_many(self.mdp, action_probs, kernels)[0] @ mu)

        theta, refined, bracket = self.refine(point_score, index, value, width)
        return OracleReport(refined, argmin_params=theta, refinement_width=bracket,
                            parameter_names=self.names, grid_points=self.size,
                            details={'grid_value': value, 'grid_index': index})


def _with_resolution(params: ParamSet, resolution: int) -> ParamSet:
    return replace(params, grid_resolution=resolution)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def worst_case_oracle(mdp: MdpInstance, source: Source, policy: Policy,
                      grid_resolution: Optional[int] = None,
                      refinement_width: float = REFINEMENT_WIDTH,
                      budget: int = GRID_BUDGET,
                      cap: int = DEFAULT_ENUMERATION_CAP) -> OracleReport:
    """
    min over the set of mu^T v^{pi,P}.

    ExplicitFinite sets are searched exactly on their kernel list; every
    other set goes through its ParamSet: evaluate the whole grid, then
    refine around the best point to ``refinement_width``.

    Raises:
        BudgetExceededError: If the grid exceeds ``budget`` points
    """
    _check_policy(mdp, policy)
    adversary = Adversary(mdp, source, grid_resolution, budget, cap)
    report = adversary.worst_case(policy.action_probs, refinement_width)
    logger.info(f"worst case {report.min_value:.12g} over {adversary.size} candidate(s)")
    return report


def decision_states(mdp: MdpInstance, source: Source, cap: int = DEFAULT_ENUMERATION_CAP) -> Tuple[int, ...]:
    """
    States where the choice of action can matter.

    A state qualifies when it has several actions and some action differs
    from action 0 in its rewards or in its transition row under some
    kernel of the set.
    """
    uset = underlying_set(source)
    states = []
    for s in range(mdp.num_states):
        if mdp.num_actions == 1:
            continue
        rewards = mdp.rewards[s]
        if np.max(np.abs(rewards - rewards[0][None])) > 0.0:
            states.append(s)
            continue
        blocks = np.stack(marginal_s(uset, s, cap))
        if np.max(np.abs(blocks - blocks[:, :1, :])) > 0.0:
            states.append(s)
    return tuple(states)


def simplex_lattice(num_actions: int, resolution: int) -> List[np.ndarray]:
    """
    Points of the probability simplex with coordinates in multiples of 1/(resolution - 1).

    Lexicographic in the first num_actions - 1 coordinates.

    Examples:
        >>> [p.tolist() for p in simplex_lattice(2, 3)]
        [[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]]
    """
    steps = resolution - 1
    points = []
    for combo in itertools.product(range(steps + 1), repeat=num_actions - 1):
        if sum(combo) <= steps:
            points.append(np.array(combo + (steps - sum(combo),), dtype=float) / steps)
    return points


def stick_breaking_coords(weights: np.ndarray) -> np.ndarray:
    """Inverse of stick_breaking_weights for one point (zero where the stick is used up)."""
    coords = np.zeros(weights.shape[0] - 1)
    remaining = 1.0
    for j in range(weights.shape[0] - 1):
        coords[j] = min(1.0, weights[j] / remaining) if remaining > 0.0 else 0.0
        remaining -= weights[j]
    return coords


def _policy_from_rows(num_states: int, num_actions: int, decision: Sequence[int],
                      rows: Sequence[np.ndarray]) -> np.ndarray:
    probs = np.zeros((num_states, num_actions))
    probs[:, 0] = 1.0
    for s, row in zip(decision, rows):
        probs[s] = row
    return probs


def max_min_oracle(mdp: MdpInstance, source: Source,
                   policy_grid_resolution: int = DEFAULT_POLICY_GRID_RESOLUTION,
                   grid_resolution: Optional[int] = None,
                   refinement_width: float = REFINEMENT_WIDTH,
                   budget: int = GRID_BUDGET,
                   policy_budget: int = POLICY_GRID_BUDGET,
                   cap: int = DEFAULT_ENUMERATION_CAP) -> OracleReport:
    """
    Best stationary policy against the worst kernel: max_pi min_P mu^T v^{pi,P}.

    Phase one scores every lattice policy on the decision states by its
    coarse-grid minimum; phase two refines the best lattice policy by
    golden-section search over its stick-breaking coordinates, with the
    full (refined) worst case as the inner objective. States without a
    decision take action 0.

    Raises:
        BudgetExceededError: If the policy lattice exceeds ``policy_budget``
    """
    if policy_grid_resolution < 2:
        raise InvalidInstanceError(f"policy grid resolution must be at least 2, got {policy_grid_resolution}")
    adversary = Adversary(mdp, source, grid_resolution, budget, cap)
    S, A = mdp.num_states, mdp.num_actions
    decision = decision_states(mdp, source, cap)

    per_state = math.comb(policy_grid_resolution - 1 + A - 1, A - 1)
    lattice_size = per_state ** len(decision)
    if lattice_size > policy_budget:
        raise BudgetExceededError(
            f"policy lattice of {lattice_size} policies exceeds the budget of {policy_budget}",
            requested=lattice_size, limit=policy_budget,
        )
    lattice = simplex_lattice(A, policy_grid_resolution)
    logger.info(f"max-min over {lattice_size} lattice policies on decision states {list(decision)}, "
                f"{adversary.size} adversary candidates each")

    best_probs, best_value = None, -math.inf
    for rows in itertools.product(lattice, repeat=len(decision)):
        probs = _policy_from_rows(S, A, decision, rows)
        _, value = adversary.scan(adversary.policy_scores(probs))
        if value > best_value:
            best_probs, best_value = probs, value

    report = adversary.worst_case(best_probs, refinement_width)
    best_value = report.min_value

    if decision and A > 1:
        def negated(coords):
            rows = [stick_breaking_weights(coords[j * (A - 1):(j + 1) * (A - 1)][None])[0]
                    for j in range(len(decision))]
            return -adversary.worst_case(_policy_from_rows(S, A, decision, rows), refinement_width).min_value

        start = np.concatenate([stick_breaking_coords(best_probs[s]) for s in decision])
        size = start.shape[0]
        half = np.full(size, 1.0 / (policy_grid_resolution - 1))
        coords, negated_value, _ = refine_coordinates(negated, start, -best_value,
                                                      np.zeros(size), np.ones(size), half, refinement_width)
        if -negated_value > best_value:
            rows = [stick_breaking_weights(coords[j * (A - 1):(j + 1) * (A - 1)][None])[0]
                    for j in range(len(decision))]
            best_probs = _policy_from_rows(S, A, decision, rows)
            report = adversary.worst_case(best_probs, refinement_width)

    policy = Policy(best_probs)
    logger.info(f"max-min value {report.min_value:.12g}")
    return OracleReport(
        report.min_value,
        argmin_params=report.argmin_params,
        argmin_index=report.argmin_index,
        refinement_width=report.refinement_width,
        maximizing_policy=policy,
        parameter_names=report.parameter_names,
        grid_points=adversary.size,
        exact=adversary.exact,
        details={'lattice_policies': lattice_size, 'decision_states': list(decision)},
    )


def _feasibility_distance(mdp: MdpInstance, uset: UncertaintySet, policy: Policy, u: np.ndarray,
                          mode: str, cap: int) -> Tuple[float, str]:
    """
    Distance from u to the nearest v^{pi,P} found for P in the set.

    The SSP certificate of the objective pi (r + gamma u) (mode s) or
    r + gamma u (mode sa) is tried first; otherwise every vertex is evaluated.
    """
    targets = mdp.rewards + mdp.discount * u[None, None, :]
    try:
        if mode == "s":
            verdict = check_strong_ssp_s(uset, ObjectiveTensor(policy.action_probs[:, :, None] * targets), cap)
        else:
            verdict = check_strong_ssp_sa(uset, ObjectiveTensor(targets), cap)
        if verdict.holds:
            value = evaluate_exact(mdp, policy, verdict.certificate).values
            return float(np.max(np.abs(value - u))), "certificate"
    except BudgetExceededError:
        if mdp.is_next_state_independent():
            certificate = (uset.weak_certificate_s(policy, u) if mode == "s"
                           else uset.weak_certificate_sa(u))
            if certificate is not None:
                value = evaluate_exact(mdp, policy, certificate).values
                return float(np.max(np.abs(value - u))), "weak certificate"
        raise

    best = math.inf
    for kernels in iter_vertex_batches(uset, cap):
        values = evaluate_many(mdp, policy.action_probs, kernels)
        best = min(best, float(np.min(np.max(np.abs(values - u[None, :]), axis=1))))
    return best, "vertex search"


def verify_tractability(mdp: MdpInstance, source: Source, policy: Policy, mode: str = "s",
                        tol: float = ORACLE_TOL, fixed_point_tol: float = DEFAULT_TOL,
                        grid_resolution: Optional[int] = None,
                        budget: int = GRID_BUDGET,
                        cap: int = DEFAULT_ENUMERATION_CAP) -> OracleReport:
    """
    Check the dynamic-programming value of ``policy`` against the oracle.

    Mode "s" uses the fixed point of T^pi, mode "sa" that of T_hat^pi. Two
    comparisons are reported: mu^T u equals the oracle minimum within tol,
    and u is attained by some kernel of the set within tol.
    """
    if mode not in ("s", "sa"):
        raise ValueError(f"mode must be 's' or 'sa', got {mode!r}")
    _check_policy(mdp, policy)
    uset = underlying_set(source)
    operator = OperatorTag.T_PI if mode == "s" else OperatorTag.T_HAT_PI
    report = fixed_point(operator, mdp, uset, policy, tol=fixed_point_tol, cap=cap)
    u = report.value.values
    fast_value = report.value.weighted(mdp.initial_dist)

    oracle = worst_case_oracle(mdp, source, policy, grid_resolution, budget=budget, cap=cap)
    distance, how = _feasibility_distance(mdp, uset, policy, u, mode, cap)
    comparisons = (
        Comparison.within(f"mu^T {operator.value} fixed point", fast_value, oracle.min_value, tol),
        Comparison(f"feasibility of {operator.value} fixed point ({how})", 0.0, distance, tol,
                   distance, distance <= tol),
    )
    for c in comparisons:
        logger.info(f"{c.quantity}: {'pass' if c.passed else 'FAIL'} (difference {c.difference:.3e})")
    return OracleReport(
        oracle.min_value,
        argmin_params=oracle.argmin_params,
        argmin_index=oracle.argmin_index,
        refinement_width=oracle.refinement_width,
        comparisons=comparisons,
        parameter_names=oracle.parameter_names,
        grid_points=oracle.grid_points,
        exact=oracle.exact,
        details={'fast_value': fast_value, 'fixed_point': u.tolist(), 'mode': mode},
    )


def min_max_oracle(mdp: MdpInstance, source: Source, grid_resolution: Optional[int] = None,
                   refinement_width: float = REFINEMENT_WIDTH, budget: int = GRID_BUDGET,
                   cap: int = DEFAULT_ENUMERATION_CAP) -> OracleReport:
    """min_P max_pi mu^T v^{pi,P}: optimal values over the grid, then refinement."""
    adversary = Adversary(mdp, source, grid_resolution, budget, cap)
    mu = mdp.initial_dist
    index, value = adversary.scan(lambda kernels: optimal_values_many(mdp, kernels) @ mu)
    if adversary.exact:
        return OracleReport(value, argmin_index=index, grid_points=adversary.size, exact=True)

    def point_score(theta):
        _, values = solve_mdp_exact(mdp, adversary.params.kernel_at(theta))
        return values.weighted(mu)

    theta, refined, bracket = adversary.refine(point_score, index, value, refinement_width)
    return OracleReport(refined, argmin_params=theta, refinement_width=bracket,
                        parameter_names=adversary.names, grid_points=adversary.size)


def duality_gap(mdp: MdpInstance, source: Source, expect_strong: Optional[bool] = None,
                policy_grid_resolution: int = DEFAULT_POLICY_GRID_RESOLUTION,
                grid_resolution: Optional[int] = None,
                refinement_width: float = REFINEMENT_WIDTH,
                tol: float = ORACLE_TOL, gap_tol: float = GAP_THRESHOLD,
                budget: int = GRID_BUDGET, policy_budget: int = POLICY_GRID_BUDGET,
                cap: int = DEFAULT_ENUMERATION_CAP) -> OracleReport:
    """
    minmax - maxmin, both by grid oracles.

    Weak duality (gap >= -tol) is always checked. Strong duality
    (|gap| <= gap_tol) is checked when ``expect_strong``; by default that is
    the case for next-state-independent rewards on a family with the weak
    s-SSP guarantee.
    """
    uset = underlying_set(source)
    if expect_strong is None:
        expect_strong = mdp.is_next_state_independent() and structural_guarantee(uset, SspMode.WEAK_S)

    maxmin = max_min_oracle(mdp, source, policy_grid_resolution, grid_resolution,
                            refinement_width, budget, policy_budget, cap)
    minmax = min_max_oracle(mdp, source, grid_resolution, refinement_width, budget, cap)
    gap = minmax.min_value - maxmin.min_value

    comparisons = [Comparison.at_least("weak duality (minmax >= maxmin)", minmax.min_value, maxmin.min_value, tol)]
    if expect_strong:
        comparisons.append(Comparison.within("strong duality", minmax.min_value, maxmin.min_value, gap_tol))
    logger.info(f"duality gap {gap:.3e} (maxmin {maxmin.min_value:.12g}, minmax {minmax.min_value:.12g})")
    return OracleReport(
        gap,
        argmin_params=minmax.argmin_params,
        argmin_index=minmax.argmin_index,
        refinement_width=max(maxmin.refinement_width, minmax.refinement_width),
        comparisons=tuple(comparisons),
        maximizing_policy=maxmin.maximizing_policy,
        parameter_names=minmax.parameter_names,
        grid_points=minmax.grid_points,
        exact=minmax.exact,
        details={'maxmin': maxmin.min_value, 'minmax': minmax.min_value},
    )


def horizon_bound(mdp: MdpInstance, horizon: int) -> float:
    """gamma^H max|r| / (1 - gamma)."""
    return mdp.discount ** horizon * mdp.value_bound()


def nonstationary_adversary_dp(mdp: MdpInstance, source: Source, policy: Policy, horizon: int,
                               cap: int = DEFAULT_ENUMERATION_CAP) -> ValueVector:
    """
    Value of ``policy`` against the best Markovian time-varying adversary over H steps.

    Backward induction v_H = 0, v_t = T^pi(v_{t+1}); returns v_0 with the
    last step size as residual.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    uset = underlying_set(source)
    v = np.zeros(mdp.num_states)
    residual = 0.0
    for _ in range(horizon):
        image = apply_T_pi(mdp, uset, policy, v, cap)
        v, residual = image.values, image.residual
    return ValueVector(v, ValueKind.FINITE_HORIZON, residual)


def random_starts(num_states: int, count: int = DOMINANCE_STARTS, seed: int = 0) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [rng.dirichlet(np.ones(num_states)) for _ in range(count)]


def policy_dominance_check(mdp: MdpInstance, source: Source,
                           starts: Optional[Sequence] = None, seed: int = 0,
                           policy_grid_resolution: int = DEFAULT_POLICY_GRID_RESOLUTION,
                           grid_resolution: Optional[int] = None,
                           tol: float = ORACLE_TOL,
                           cap: int = DEFAULT_ENUMERATION_CAP) -> OracleReport:
    """
    Is one stationary policy max-min optimal for every start distribution?

    For each start the max-min policy is computed; every such policy is then
    evaluated at every other start (details['cross_values'][i][j] is the
    worst case of the policy optimal at start i, evaluated at start j).
    The robust greedy policy is compared against each max-min value.
    ``details['common_optimal']`` says whether some computed policy is
    optimal at all starts.
    """
    starts = random_starts(mdp.num_states, DOMINANCE_STARTS, seed) if starts is None else list(starts)
    uset = underlying_set(source)
    _, greedy, _ = solve_robust_mdp(mdp, uset, cap=cap)

    optima, policies = [], []
    comparisons = []
    for i, mu in enumerate(starts):
        instance = mdp.with_initial_dist(mu)
        best = max_min_oracle(instance, source, policy_grid_resolution, grid_resolution, cap=cap)
        optima.append(best.min_value)
        policies.append(best.maximizing_policy)
        greedy_value = worst_case_oracle(instance, source, greedy, grid_resolution, cap=cap).min_value
        comparisons.append(Comparison.at_least(f"greedy policy at start {i}", greedy_value, best.min_value, tol))

    cross = [[worst_case_oracle(mdp.with_initial_dist(mu), source, policy, grid_resolution, cap=cap).min_value
              for mu in starts] for policy in policies]
    common = any(all(cross[i][j] >= optima[j] - tol for j in range(len(starts))) for i in range(len(starts)))
    logger.info(f"dominance over {len(starts)} start(s): common optimal policy={common}")
    return OracleReport(
        min(optima),
        comparisons=tuple(comparisons),
        maximizing_policy=greedy,
        details={
            'max_min_values': optima,
            'cross_values': cross,
            'common_optimal': common,
            'policies': [p.action_probs.tolist() for p in policies],
        },
    )


def search_sa_gap(num_trials: int = 200, seed: int = 0, num_states: int = 3, num_actions: int = 2,
                  num_factors: int = 2, vertices_per_factor: int = 2, discount: float = 0.5,
                  threshold: float = GAP_THRESHOLD, grid_resolution: Optional[int] = None,
                  cap: int = DEFAULT_ENUMERATION_CAP) -> GapSearchResult:
    """
    Look for a factor model where the pair-wise DP value misses the worst case.

    Trial i draws a FactorModel with next-state-dependent rewards from child
    seed i of SeedSequence(seed) and compares mu^T u_hat (uniform policy)
    against the worst-case oracle. The first trial whose gap exceeds
    ``threshold`` is returned.
    """
    from .instance_library import GeneratorSpec, random_instance

    spec = GeneratorSpec(variant="factor_model", num_states=num_states, num_actions=num_actions,
                         num_factors=num_factors, vertices_per_component=vertices_per_factor,
                         discount=discount, next_state_independent=False)
    best = GapSearchResult(False, 0, -math.inf, math.nan, math.nan)
    for trial, child in enumerate(np.random.SeedSequence(seed).spawn(num_trials)):
        instance = random_instance(spec, child)
        policy = Policy.uniform(num_states, num_actions)
        fast = fixed_point(OperatorTag.T_HAT_PI, instance.mdp, instance.uncertainty, policy, cap=cap)
        fast_value = fast.value.weighted(instance.mdp.initial_dist)
        oracle = worst_case_oracle(instance.mdp, instance.uncertainty, policy, grid_resolution, cap=cap)
        gap = oracle.min_value - fast_value
        if gap > threshold:
            logger.info(f"sa gap {gap:.3e} found at trial {trial}")
            return GapSearchResult(True, trial + 1, gap, fast_value, oracle.min_value, instance, policy)
        if gap > best.gap:
            best = GapSearchResult(False, trial + 1, gap, fast_value, oracle.min_value, instance, policy)
    logger.info(f"no sa gap above {threshold:g} in {num_trials} trials (largest {best.gap:.3e})")
    return GapSearchResult(False, num_trials, best.gap, best.fast_value, best.oracle_value, best.instance, best.policy)
