"""
Expected-quantity evaluation and the acceptance suite behind ``reproduce``.

A NamedInstance lists quantities such as ``max_min_value(start=a)``;
QuantityEvaluator computes them with the solvers and oracles, and
run_expected compares each against its tolerance. The acceptance suite
adds seeded property checks over random instances of every set variant.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import RobustMdpError
from .instance_format import parse_quantity
from .instance_library import (
    GeneratorSpec,
    NamedInstance,
    appendix_d_witness,
    library_names,
    load_appendix_d,
    load_named,
    random_instance,
)
from .mdp_core import Policy, evaluate_many
from .robust_bellman import (
    DEFAULT_TOL,
    OperatorTag,
    apply_T_hat_pi,
    apply_T_opt,
    apply_T_pi,
    fixed_point,
    solve_robust_mdp,
)
from .ssp_checker import (
    ObjectiveTensor,
    SspMode,
    check_implication_chain,
    check_strong_ssp_s,
    falsify_ssp,
    structural_guarantee,
)
from .uncertainty_models import (
    DEFAULT_ENUMERATION_CAP,
    VARIANTS,
    is_s_rectangular,
    is_sa_rectangular,
    vertex_count,
    vertex_stack,
)
from .verification_oracle import (
    DEFAULT_POLICY_GRID_RESOLUTION,
    OracleReport,
    duality_gap,
    horizon_bound,
    max_min_oracle,
    nonstationary_adversary_dp,
    search_sa_gap,
    worst_case_oracle,
)

logger = logging.getLogger(__name__)


ORDERING_INSTANCES = 200
ORDERING_SLACK = 2e-8
TRACTABILITY_INSTANCES = 50
TRACTABILITY_TOL = 1e-4
GAP_TRIALS = 200
SSP_SAMPLES = 500
CHAIN_SAMPLES = 500
DUALITY_INSTANCES = 20
DUALITY_TOL = 1e-4
HORIZON_INSTANCES = 50
HORIZONS = (1, 5, 20)
OPERATOR_PAIRS = 1000
OPERATOR_POOL = 10
OPERATOR_SLACK = 1e-9


@dataclass
class CheckResult:
    """
    One computed quantity, optionally compared against an expected value.

    ``passed`` is None exactly when no expected value is attached; ``outcome``
    overrides the symmetric tolerance test for one-sided comparisons.
    """
    quantity: str
    value: float
    expected: Optional[float] = None
    tolerance: Optional[float] = None
    provenance: str = ""
    seconds: float = 0.0
    error: Optional[str] = None
    outcome: Optional[bool] = None

    @property
    def passed(self) -> Optional[bool]:
        if self.expected is None:
            return None
        if self.outcome is not None:
            return self.outcome
        if self.error is not None or math.isnan(self.value):
            return False
        return abs(self.value - self.expected) <= self.tolerance

    def to_dict(self) -> Dict:
        data = {'quantity': self.quantity, 'value': self.value, 'seconds': round(self.seconds, 3)}
        if self.expected is not None:
            data.update(expected=self.expected, tolerance=self.tolerance, passed=self.passed)
        if self.provenance:
            data['provenance'] = self.provenance
        if self.error is not None:
            data['error'] = self.error
        return data


@dataclass
class RunReport:
    """What a CLI command computed: inputs, results and wall time."""
    command: str
    inputs: Dict = field(default_factory=dict)
    results: List[CheckResult] = field(default_factory=list)
    wall_time: float = 0.0
    details: Dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed is not False for r in self.results)

    @property
    def failures(self) -> List[CheckResult]:
        return [r for r in self.results if r.passed is False]

    def to_dict(self) -> Dict:
        return {
            'command': self.command,
            'inputs': self.inputs,
            'results': [r.to_dict() for r in self.results],
            'wall_time': round(self.wall_time, 3),
            'passed': self.passed,
            'details': self.details,
        }


# ---------------------------------------------------------------------------
# Expected quantities
# ---------------------------------------------------------------------------

class QuantityEvaluator:
    """
    Computes ``kind(key=value,...)`` quantities for one instance.

    Oracle reports are cached per (start, policy), so max_min_value and
    max_min_policy at the same start share one search.
    """

    def __init__(self, instance: NamedInstance, grid_resolution: Optional[int] = None,
                 policy_grid_resolution: int = DEFAULT_POLICY_GRID_RESOLUTION,
                 tol: float = DEFAULT_TOL, cap: int = DEFAULT_ENUMERATION_CAP):
        self.instance = instance
        self.grid_resolution = grid_resolution
        self.policy_grid_resolution = policy_grid_resolution
        self.tol = tol
        self.cap = cap
        self._cache: Dict[Tuple, object] = {}

    def _cached(self, key: Tuple, compute: Callable[[], object]):
        if key not in self._cache:
            self._cache[key] = compute()
        return self._cache[key]

    def _mdp(self, start: str):
        return self.instance.with_start(start).mdp

    def max_min(self, start: str) -> OracleReport:
        return self._cached(('max_min', start), lambda: max_min_oracle(
            self._mdp(start), self.instance.uncertainty, self.policy_grid_resolution,
            self.grid_resolution, cap=self.cap))

    def worst_case(self, start: str, policy: str) -> OracleReport:
        return self._cached(('worst_case', start, policy), lambda: worst_case_oracle(
            self._mdp(start), self.instance.uncertainty, self.instance.policy(policy),
            self.grid_resolution, cap=self.cap))

    def robust_optimum(self) -> Tuple:
        return self._cached(('robust_optimum',), lambda: solve_robust_mdp(
            self.instance.mdp, self.instance.vertex_set, tol=self.tol, cap=self.cap))

    def evaluate(self, quantity: str) -> float:
        kind, args = parse_quantity(quantity)
        instance = self.instance

        if kind == "max_min_value":
            return self.max_min(args['start']).min_value
        if kind == "max_min_policy":
            probs = self.max_min(args['start']).maximizing_policy.action_probs
            return float(probs[instance.state_index(args['state']), int(args['action'])])
        if kind == "worst_case_value":
            return self.worst_case(args['start'], args['policy']).min_value
        if kind == "worst_case_param":
            return self.worst_case(args['start'], args['policy']).param(args['param'])
        if kind == "robust_value":
            report = fixed_point(args['operator'], instance.mdp, instance.vertex_set,
                                 instance.policy(args['policy']), tol=self.tol, cap=self.cap)
            return report.value.weighted(instance.start_distribution(args['start']))
        if kind == "robust_optimal_value":
            u_star, _, _ = self.robust_optimum()
            return u_star.weighted(instance.start_distribution(args['start']))
        if kind == "robust_optimal_policy":
            _, policy, _ = self.robust_optimum()
            return float(policy.action_probs[instance.state_index(args['state']), int(args['action'])])
        if kind == "s_rectangular":
            return float(is_s_rectangular(instance.vertex_set, self.cap))
        if kind == "sa_rectangular":
            return float(is_sa_rectangular(instance.vertex_set, self.cap))
        if kind == "ssp_holds":
            verdict = falsify_ssp(instance.vertex_set, args['mode'], int(args['samples']),
                                  int(args['seed']), self.cap)
            return float(verdict.holds)
        return float(vertex_count(instance.vertex_set))


def _timed(quantity: str, compute: Callable[[], float], expected: Optional[float] = None,
           tolerance: Optional[float] = None, provenance: str = "") -> CheckResult:
    start = time.perf_counter()
    try:
        value, error = float(compute()), None
    except (RobustMdpError, KeyError, ValueError) as e:
        logger.error(f"{quantity}: {e}")
        value, error = math.nan, str(e)
    return CheckResult(quantity, value, expected, tolerance, provenance, time.perf_counter() - start, error)


def run_expected(instance: NamedInstance, **settings) -> List[CheckResult]:
    """Evaluate every expected quantity of ``instance`` (settings go to QuantityEvaluator)."""
    evaluator = QuantityEvaluator(instance, **settings)
    results = []
    for item in instance.expected:
        result = _timed(f"{instance.name}: {item.quantity}", lambda: evaluator.evaluate(item.quantity),
                        item.value, item.tolerance, item.provenance)
        logger.info(f"{result.quantity} = {result.value:.12g} ({'pass' if result.passed else 'FAIL'})")
        results.append(result)
    return results


# ---------------------------------------------------------------------------
# Acceptance suite
# ---------------------------------------------------------------------------

def _random_cases(count: int, seed: int, variants: Sequence[str] = tuple(VARIANTS),
                  **spec) -> Iterator[Tuple[NamedInstance, np.random.Generator]]:
    """Instance i cycles through ``variants``; each gets its own generator for extra draws."""
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(count)):
        instance_seed, draw_seed = child.spawn(2)
        generator = GeneratorSpec(variant=variants[i % len(variants)], **spec)
        yield random_instance(generator, instance_seed), np.random.default_rng(draw_seed)


def _random_policy(rng: np.random.Generator, num_states: int, num_actions: int) -> Policy:
    return Policy(rng.dirichlet(np.ones(num_actions), size=num_states))


def check_ordering(num_instances: int = ORDERING_INSTANCES, seed: int = 0,
                   slack: float = ORDERING_SLACK) -> float:
    """Instances where u_hat^pi <= u^pi <= v^{pi,P} fails for some vertex P."""
    violations = 0
    for instance, rng in _random_cases(num_instances, seed):
        mdp, uset = instance.mdp, instance.uncertainty
        policy = _random_policy(rng, mdp.num_states, mdp.num_actions)
        u_hat = fixed_point(OperatorTag.T_HAT_PI, mdp, uset, policy).value.values
        u = fixed_point(OperatorTag.T_PI, mdp, uset, policy).value.values
        values = evaluate_many(mdp, policy.action_probs, vertex_stack(uset))
        if np.any(u_hat > u + slack) or np.any(u[None, :] > values + slack):
            logger.warning(f"ordering violated on {instance.name}")
            violations += 1
    return violations


def check_factor_tractability(num_instances: int = TRACTABILITY_INSTANCES, seed: int = 1,
                              grid_resolution: Optional[int] = None) -> float:
    """Largest |mu^T u_hat^pi - oracle| over factor models with next-state-independent rewards."""
    worst = 0.0
    for instance, rng in _random_cases(num_instances, seed, ("factor_model",), next_state_independent=True):
        mdp = instance.mdp
        policy = _random_policy(rng, mdp.num_states, mdp.num_actions)
        fast = fixed_point(OperatorTag.T_HAT_PI, mdp, instance.uncertainty, policy).value.weighted(mdp.initial_dist)
        oracle = worst_case_oracle(mdp, instance.uncertainty, policy, grid_resolution).min_value
        worst = max(worst, abs(fast - oracle))
    return worst


def check_gap_search(num_trials: int = GAP_TRIALS, seed: int = 0,
                     grid_resolution: Optional[int] = None) -> float:
    """1 when a factor model with next-state-dependent rewards shows an sa gap."""
    result = search_sa_gap(num_trials, seed, grid_resolution=grid_resolution)
    if result.found:
        logger.info(f"gap {result.gap:.3e} after {result.trials} trial(s) "
                    f"(u_hat {result.fast_value:.12g}, oracle {result.oracle_value:.12g})")
    return float(result.found)


def check_ssp_structure(num_samples: int = SSP_SAMPLES, seed: int = 2) -> float:
    """
    Failures among the guaranteed (family, mode) pairs, plus one if the
    coupled two-state set survives its known strong_s witness.
    """
    failures = 0
    structured = [v for v in VARIANTS if v != "explicit_finite"]
    for instance, _ in _random_cases(len(structured), seed, structured):
        uset = instance.uncertainty
        for mode in SspMode:
            if structural_guarantee(uset, mode) and not falsify_ssp(uset, mode, num_samples, seed).holds:
                logger.warning(f"{mode.value} falsified on {uset.variant}")
                failures += 1
    coupled = load_appendix_d().vertex_set
    if check_strong_ssp_s(coupled, ObjectiveTensor(appendix_d_witness())).holds:
        logger.warning("strong_s witness did not separate the coupled set")
        failures += 1
    return failures


def check_implications(num_samples: int = CHAIN_SAMPLES, seed: int = 3) -> float:
    """Samples where one of the SSP implications breaks."""
    broken_samples = 0
    for instance, rng in _random_cases(num_samples, seed):
        uset = instance.uncertainty
        policy = _random_policy(rng, uset.num_states, uset.num_actions)
        values = rng.uniform(-1.0, 1.0, size=uset.num_states)
        broken = check_implication_chain(uset, policy, values)
        if broken:
            logger.warning(f"{instance.name}: {', '.join(broken)}")
            broken_samples += 1
    return broken_samples


def check_horizon_bound(num_instances: int = HORIZON_INSTANCES, seed: int = 4,
                        horizons: Sequence[int] = HORIZONS, tol: float = DEFAULT_TOL) -> float:
    """(instance, H) pairs where the finite-horizon adversary is further from u^pi than the bound allows."""
    violations = 0
    for instance, rng in _random_cases(num_instances, seed):
        mdp, uset = instance.mdp, instance.uncertainty
        policy = _random_policy(rng, mdp.num_states, mdp.num_actions)
        u = fixed_point(OperatorTag.T_PI, mdp, uset, policy, tol=tol).value
        for horizon in horizons:
            distance = u.sup_distance(nonstationary_adversary_dp(mdp, uset, policy, horizon).values)
            if distance > horizon_bound(mdp, horizon) + tol:
                violations += 1
    return violations


def check_operator_quality(num_pairs: int = OPERATOR_PAIRS, seed: int = 5,
                           pool_size: int = OPERATOR_POOL) -> float:
    """
    Fixed-point reports above their target plus sampled contraction and
    monotonicity failures, cycling through the three operators.
    """
    pool = list(_random_cases(pool_size, seed))
    failures = 0
    for instance, rng in pool:
        policy = _random_policy(rng, instance.mdp.num_states, instance.mdp.num_actions)
        for tag in OperatorTag:
            report = fixed_point(tag, instance.mdp, instance.uncertainty, policy)
            failures += report.final_residual > report.tolerance_target

    rng = np.random.default_rng(seed)
    for i in range(num_pairs):
        instance, _ = pool[i % pool_size]
        mdp, uset = instance.mdp, instance.uncertainty
        policy = _random_policy(rng, mdp.num_states, mdp.num_actions)
        operator = (
            lambda v: apply_T_pi(mdp, uset, policy, v).values,
            lambda v: apply_T_hat_pi(mdp, uset, policy, v).values,
            lambda v: apply_T_opt(mdp, uset, v)[0].values,
        )[i % 3]
        v = rng.uniform(-5.0, 5.0, size=mdp.num_states)
        w = rng.uniform(-5.0, 5.0, size=mdp.num_states)
        above = v + rng.uniform(0.0, 1.0, size=mdp.num_states)
        tv = operator(v)
        if np.max(np.abs(tv - operator(w))) > mdp.discount * np.max(np.abs(v - w)) + OPERATOR_SLACK:
            failures += 1
        if np.any(operator(above) < tv - OPERATOR_SLACK):
            failures += 1
    return failures


def check_duality(num_instances: int = DUALITY_INSTANCES, seed: int = 6,
                  grid_resolution: Optional[int] = None) -> float:
    """Largest |minmax - maxmin| over small factor models with next-state-independent rewards."""
    worst = 0.0
    for instance, _ in _random_cases(num_instances, seed, ("factor_model",), num_states=2,
                                     next_state_independent=True, discount=0.5):
        report = duality_gap(instance.mdp, instance.uncertainty, expect_strong=True,
                             grid_resolution=grid_resolution)
        worst = max(worst, abs(report.min_value))
    return worst


ACCEPTANCE_SUITE: Tuple[Tuple[str, Callable[[], float], float, float], ...] = (
    ("ordering u_hat <= u <= v over random instances", check_ordering, 0.0, 0.0),
    ("SSP structural guarantees and coupled-set witness", check_ssp_structure, 0.0, 0.0),
    ("SSP implication chain", check_implications, 0.0, 0.0),
    ("finite-horizon adversary bound", check_horizon_bound, 0.0, 0.0),
    ("fixed-point residuals, contraction and monotonicity", check_operator_quality, 0.0, 0.0),
    ("weak sa-tractability of factor models", check_factor_tractability, 0.0, TRACTABILITY_TOL),
    ("sa gap with next-state-dependent rewards found", check_gap_search, 1.0, 0.0),
    ("strong duality on factor models", check_duality, 0.0, DUALITY_TOL),
)


def run_acceptance() -> List[CheckResult]:
    """Run every check of the acceptance suite."""
    results = []
    for name, check, expected, tolerance in ACCEPTANCE_SUITE:
        result = _timed(f"acceptance: {name}", check, expected, tolerance, "property check")
        logger.info(f"{result.quantity}: {result.value:.6g} in {result.seconds:.1f}s "
                    f"({'pass' if result.passed else 'FAIL'})")
        results.append(result)
    return results


def reproduce(names: Optional[Sequence[str]] = None, suite: bool = True,
              **settings) -> RunReport:
    """
    Check the expected lists of the named library instances (all by default),
    followed by the acceptance suite when ``suite`` is set.
    """
    started = time.perf_counter()
    names = list(library_names()) if not names else list(names)
    report = RunReport('reproduce', {'names': names, 'suite': suite})
    for name in names:
        report.results.extend(run_expected(load_named(name), **settings))
    if suite:
        report.results.extend(run_acceptance())
    report.wall_time = time.perf_counter() - started
    failures = report.failures
    logger.info(f"reproduce: {len(report.results) - len(failures)}/{len(report.results)} passed "
                f"in {report.wall_time:.1f}s")
    return report
