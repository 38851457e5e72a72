"""
Named instances and seeded random generators.

Every loader returns a NamedInstance: the MDP, its uncertainty set (a
vertex-represented UncertaintySet or a ParamSet), a provenance note and
the list of expected quantities that ``reproduce`` checks. Expected
quantities use the kind(key=value,...) names evaluated by
robust_mdp_lab.reproduction.
"""
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidInstanceError, VerificationError
from .mdp_core import MdpInstance, Policy, TransitionKernel, evaluate_exact
from .param_sets import AffineParamSet, ParamSet, Parameter, underlying_set
from .uncertainty_models import (
    VARIANTS,
    CoeffFactor,
    ExplicitFinite,
    FactorModel,
    Partitioned,
    SaCoeffFactor,
    SaRectangular,
    SRectangular,
    UncertaintySet,
)

logger = logging.getLogger(__name__)


RECONSTRUCTION_PROBES = 20
RECONSTRUCTION_TOL = 1e-10


@dataclass(frozen=True)
class ExpectedValue:
    """A quantity the instance is known to produce, with its tolerance and origin."""
    quantity: str
    value: float
    tolerance: float
    provenance: str = ""


@dataclass(frozen=True, eq=False)
class NamedInstance:
    """
    A robust MDP ready for the solvers.

    Attributes:
        name: Registry / file name
        mdp: Rewards, discount and initial distribution
        uncertainty: Vertex-represented set or parametric description
        provenance: Where the instance comes from
        expected: Quantities checked by ``reproduce``
        state_labels: Optional state names (used for ``start=`` and printing)
        policies: Named policies referenced by expected quantities
    """
    name: str
    mdp: MdpInstance
    uncertainty: Union[UncertaintySet, ParamSet]
    provenance: str = ""
    expected: Tuple[ExpectedValue, ...] = ()
    state_labels: Tuple[str, ...] = ()
    policies: Dict[str, Policy] = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.uncertainty.num_states, self.uncertainty.num_actions)
        if shape != (self.mdp.num_states, self.mdp.num_actions):
            raise InvalidInstanceError(
                f"{self.name}: set is {shape[0]}x{shape[1]}, MDP is {self.mdp.num_states}x{self.mdp.num_actions}"
            )
        if self.state_labels and len(self.state_labels) != self.mdp.num_states:
            raise InvalidInstanceError(f"{self.name}: {len(self.state_labels)} labels for {self.mdp.num_states} states")
        for key, policy in self.policies.items():
            if policy.action_probs.shape != shape:
                raise InvalidInstanceError(f"{self.name}: policy {key} has shape {policy.action_probs.shape}")

    @property
    def vertex_set(self) -> UncertaintySet:
        return underlying_set(self.uncertainty)

    def state_index(self, state: Union[str, int]) -> int:
        """Index of a state given by label or (string) index."""
        if isinstance(state, str) and state in self.state_labels:
            return self.state_labels.index(state)
        try:
            index = int(state)
        except (TypeError, ValueError):
            raise InvalidInstanceError(f"{self.name}: unknown state {state!r}") from None
        if not 0 <= index < self.mdp.num_states:
            raise InvalidInstanceError(f"{self.name}: state {index} out of range")
        return index

    def state_name(self, index: int) -> str:
        return self.state_labels[index] if self.state_labels else str(index)

    def start_distribution(self, start: Union[str, int, None]) -> np.ndarray:
        """``mu``/None keeps the instance's own distribution; anything else is a point mass."""
        if start is None or start == "mu":
            return self.mdp.initial_dist
        return self.mdp.point_mass(self.state_index(start))

    def with_start(self, start: Union[str, int, None]) -> "NamedInstance":
        return replace(self, mdp=self.mdp.with_initial_dist(self.start_distribution(start)))

    def policy(self, name: str) -> Policy:
        if name == "uniform" and name not in self.policies:
            return Policy.uniform(self.mdp.num_states, self.mdp.num_actions)
        if name not in self.policies:
            raise InvalidInstanceError(f"{self.name}: no policy named {name!r} (have {sorted(self.policies)})")
        return self.policies[name]


def _state_rewards(per_state: Sequence[float], num_actions: int) -> np.ndarray:
    """r[s][a][s'] = r(s): a reward collected in the current state."""
    r = np.asarray(per_state, dtype=float)
    return np.broadcast_to(r[:, None, None], (r.shape[0], num_actions, r.shape[0])).copy()


def _unit(size: int, index: int) -> np.ndarray:
    e = np.zeros(size)
    e[index] = 1.0
    return e


# ---------------------------------------------------------------------------
# Hand-built instances
# ---------------------------------------------------------------------------

def load_example_3_1() -> NamedInstance:
    """
    Two states, one action, five kernels (p, q).

    Out of state 0 the chain goes to state 0 with probability p, out of
    state 1 it goes to state 1 with probability q; (0, 0) swaps the states
    deterministically. The centre point (1/2, 1/2) breaks s-rectangularity
    of the finite set but never is the only minimizer of a linear form.
    """
    points = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0), (0.5, 0.5)]
    kernels = tuple(
        TransitionKernel([[[p, 1.0 - p]], [[1.0 - q, q]]]) for p, q in points
    )
    mdp = MdpInstance(_state_rewards([1.0, 0.0], 1), 0.9, [0.5, 0.5])
    return NamedInstance(
        name="example_3_1",
        mdp=mdp,
        uncertainty=ExplicitFinite(kernels),
        provenance="finite two-state set, non-rectangular only through its centre point",
        expected=(
            ExpectedValue("vertex_count()", 5, 0, "set definition"),
            ExpectedValue("s_rectangular()", 1, 0, "hull of the five points is the unit square"),
            ExpectedValue("ssp_holds(mode=strong_s,samples=1000,seed=0)", 1, 0,
                          "centre point is never the unique minimizer"),
        ),
        state_labels=("1", "2"),
    )


def _wiesemann_kernel_template() -> Tuple[np.ndarray, np.ndarray]:
    # states a b c d e f, parameters (xi, p)
    S, A = 6, 2
    offset = np.zeros((S, A, S))
    coefficients = np.zeros((2, S, A, S))
    # a: action 0 reaches b w.p. xi and c w.p. 1 - xi, action 1 swaps
    offset[0, 0, 2] = 1.0
    coefficients[0, 0, 0, 1], coefficients[0, 0, 0, 2] = 1.0, -1.0
    offset[0, 1, 1] = 1.0
    coefficients[0, 0, 1, 1], coefficients[0, 0, 1, 2] = -1.0, 1.0
    offset[1, :, 4] = 1.0
    offset[2, :, 5] = 1.0
    offset[3, :, 3] = 1.0
    # e and f share the factor (1 - p) e_a + p e_d
    for s in (4, 5):
        offset[s, :, 0] = 1.0
        coefficients[1, s, :, 0] = -1.0
        coefficients[1, s, :, 3] = 1.0
    return offset, coefficients


def _wiesemann_rewards() -> np.ndarray:
    rewards = np.zeros((6, 2, 6))
    rewards[4, :, 3] = 1.0
    rewards[5, :, 3] = -1.0
    return rewards


def load_wiesemann_6state() -> NamedInstance:
    """
    Six states a..f, two actions, parameters (xi, p) in [0, 1]^2.

    The p parameter moves the transitions out of both e and f at once,
    so the set is not s-rectangular while a partition {a,b,c,d} / {e,f}
    still makes it tractable for next-state-independent objectives.
    Only structural properties are asserted for it.
    """
    offset, coefficients = _wiesemann_kernel_template()
    params = AffineParamSet((Parameter("xi"), Parameter("p")), offset, coefficients)
    mdp = MdpInstance(_wiesemann_rewards(), 0.9, _unit(6, 0))
    return NamedInstance(
        name="wiesemann_6state",
        mdp=mdp,
        uncertainty=params,
        provenance="randomization gadget at a, one parameter coupling the exits of e and f",
        expected=(
            ExpectedValue("s_rectangular()", 0, 0, "p couples two states"),
            ExpectedValue("ssp_holds(mode=weak_s,samples=1000,seed=0)", 1, 0, "partitioned structure"),
        ),
        state_labels=tuple("abcdef"),
    )


def wiesemann_partitioned_model() -> Partitioned:
    """
    The six-state set as a Partitioned model: {a,b,c,d} s-rectangular,
    {e,f} driven by one shared factor with vertices e_a and e_d.
    """
    e = lambda i: _unit(6, i)
    block = lambda row0, row1: np.stack([row0, row1])
    s_part = (
        (block(e(2), e(1)), block(e(1), e(2))),   # xi = 0, xi = 1
        (block(e(4), e(4)),),
        (block(e(5), e(5)),),
        (block(e(3), e(3)),),
    )
    coefficients = np.ones((2, 2, 1))
    factor_sets = (np.stack([e(0), e(3)]),)
    return Partitioned(((0, 1, 2, 3), (4, 5)), s_part, coefficients, factor_sets)


def load_example_4_2() -> NamedInstance:
    """
    Four states a..d, three actions, factors and coefficients both uncertain.

    Factors: w1 = e_b and w2 = e_c are fixed, w3 ranges over {e_a, e_d}
    (parameter p), w4 = e_d. At a the coefficient parameter xi decides
    which of actions 0 and 1 reaches b and which reaches c; action 2 uses
    w3. At d, actions 0 and 1 use w4 and action 2 uses w3, so w3 is shared
    between a and d. Per-period rewards are +1 at b and -1/2 at c, gamma = 1/2.
    The robust optimal policy must randomize (1/2, 1/2, 0) at a.
    """
    S, A, r = 4, 3, 4
    factor_sets = (
        np.stack([_unit(S, 1)]),
        np.stack([_unit(S, 2)]),
        np.stack([_unit(S, 0), _unit(S, 3)]),
        np.stack([_unit(S, 3)]),
    )
    w = lambda i: _unit(r, i)
    coeff_sets = (
        np.stack([np.stack([w(1), w(0), w(2)]),     # xi = 0: action 0 -> c, action 1 -> b
                  np.stack([w(0), w(1), w(2)])]),   # xi = 1: action 0 -> b, action 1 -> c
        np.stack([np.stack([w(0), w(0), w(0)])]),
        np.stack([np.stack([w(1), w(1), w(1)])]),
        np.stack([np.stack([w(3), w(3), w(2)])]),
    )
    mdp = MdpInstance(_state_rewards([0.0, 1.0, -0.5, 0.0], A), 0.5, _unit(S, 0))
    return NamedInstance(
        name="example_4_2",
        mdp=mdp,
        uncertainty=CoeffFactor(factor_sets, coeff_sets),
        provenance="coefficient-factor set where only a and d have uncertain transitions",
        expected=(
            ExpectedValue("robust_optimal_value(start=a)", 0.25, 1e-6, "matrix game at a"),
            ExpectedValue("robust_optimal_policy(state=a,action=0)", 0.5, 1e-6, "matrix game at a"),
            ExpectedValue("robust_optimal_policy(state=a,action=1)", 0.5, 1e-6, "matrix game at a"),
            ExpectedValue("robust_optimal_policy(state=a,action=2)", 0.0, 1e-6, "matrix game at a"),
            ExpectedValue("s_rectangular()", 0, 0, "w3 shared between a and d"),
            ExpectedValue("ssp_holds(mode=weak_s,samples=500,seed=0)", 1, 0, "factors-first minimization"),
        ),
        state_labels=tuple("abcd"),
    )


APPENDIX_D_REWARDS = (0.0, 0.0, 0.5, -1.0, 1.0)
APPENDIX_D_DISCOUNT = 0.25


def appendix_d_closed_form(p: float, beta: float, mu: Sequence[float], discount: float = APPENDIX_D_DISCOUNT) -> float:
    """
    (1 - gamma) mu^T v for the five-state instance.

    beta is the probability of action 0 at b; mu is indexed a, b, c, d, e.
    """
    g = discount
    mu_a, mu_b, mu_c, mu_d, mu_e = mu
    return (mu_a * (g / 2.0 * (1.0 - p) + g * g * p * (1.0 - 2.0 * p) * (2.0 * beta - 1.0))
            + (mu_e - mu_d + 0.5 * mu_c)
            + mu_b * g * (2.0 * beta - 1.0) * (1.0 - 2.0 * p))


def _appendix_d_policy(beta: float) -> Policy:
    probs = np.tile([1.0, 0.0], (5, 1))
    probs[1] = (beta, 1.0 - beta)
    return Policy(probs)


def _validate_appendix_d(mdp: MdpInstance, params: AffineParamSet, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    for probe in range(RECONSTRUCTION_PROBES):
        p, beta = rng.random(2)
        mu = rng.dirichlet(np.ones(5))
        kernel = params.kernel_at([p])
        value = evaluate_exact(mdp, _appendix_d_policy(beta), kernel).weighted(mu)
        expected = appendix_d_closed_form(p, beta, mu, mdp.discount)
        if abs((1.0 - mdp.discount) * value - expected) > RECONSTRUCTION_TOL:
            raise VerificationError(
                f"five-state reconstruction disagrees with the closed-form return at probe {probe} "
                f"(p={p:.6f}, beta={beta:.6f}): {(1.0 - mdp.discount) * value!r} vs {expected!r}"
            )


def load_appendix_d(discount: float = APPENDIX_D_DISCOUNT) -> NamedInstance:
    """
    Five states a..e, two actions, one parameter p.

    From a (both actions) the chain reaches b w.p. p and c w.p. 1 - p; from b
    action 0 reaches d w.p. p and e w.p. 1 - p, action 1 swaps; c, d, e are
    absorbing with per-period rewards +1/2, -1, +1. The return matches the
    closed form of appendix_d_closed_form, which is checked at load time.
    No single stationary policy is optimal both from a and from b.

    Raises:
        VerificationError: If the reconstruction disagrees with the closed form
    """
    S, A = 5, 2
    offset = np.zeros((S, A, S))
    coefficients = np.zeros((1, S, A, S))
    offset[0, :, 2] = 1.0
    coefficients[0, 0, :, 1], coefficients[0, 0, :, 2] = 1.0, -1.0
    offset[1, 0, 4] = 1.0
    coefficients[0, 1, 0, 3], coefficients[0, 1, 0, 4] = 1.0, -1.0
    offset[1, 1, 3] = 1.0
    coefficients[0, 1, 1, 3], coefficients[0, 1, 1, 4] = -1.0, 1.0
    for s in (2, 3, 4):
        offset[s, :, s] = 1.0

    params = AffineParamSet((Parameter("p"),), offset, coefficients)
    mdp = MdpInstance(_state_rewards(APPENDIX_D_REWARDS, A), discount, _unit(S, 0))
    _validate_appendix_d(mdp, params)

    expected = ()
    if discount == APPENDIX_D_DISCOUNT:
        seven_96 = float(Fraction(7, 96))
        expected = (
            ExpectedValue("max_min_value(start=a)", seven_96, 1e-5, "closed form, maximum at beta = 0"),
            ExpectedValue("max_min_policy(start=a,state=b,action=0)", 0.0, 1e-3, "closed form"),
            ExpectedValue("worst_case_value(start=a,policy=beta0)", seven_96, 1e-6, "closed form"),
            ExpectedValue("worst_case_param(start=a,policy=beta0,param=p)", 0.75, 1e-3, "closed form"),
            ExpectedValue("max_min_value(start=b)", 0.0, 1e-6, "closed form, maximum at beta = 1/2"),
            ExpectedValue("max_min_policy(start=b,state=b,action=0)", 0.5, 1e-3, "closed form"),
            ExpectedValue("worst_case_value(start=b,policy=beta0)", -1.0 / 3.0, 1e-6, "closed form"),
            ExpectedValue("worst_case_value(start=a,policy=beta_half)", 0.0, 1e-6, "closed form"),
            ExpectedValue("s_rectangular()", 0, 0, "p couples a and b"),
            ExpectedValue("ssp_holds(mode=strong_s,samples=200,seed=0)", 0, 0,
                          "witness V = (0,0,1,1,0) lifted"),
        )
    return NamedInstance(
        name="appendix_d",
        mdp=mdp,
        uncertainty=params,
        provenance="five-state instance without a start-independent optimal stationary policy",
        expected=expected,
        state_labels=tuple("abcde"),
        policies={"beta0": _appendix_d_policy(0.0), "beta_half": _appendix_d_policy(0.5)},
    )


def appendix_d_witness() -> np.ndarray:
    """
    Objective V[s][a][s'] = pi[s][a] V[s'] with V = (0, 0, 1, 1, 0) and pi = action 0.

    State a is minimized only by p = 1 and state b only by p = 0, so no
    kernel of the set minimizes both.
    """
    values = np.array([0.0, 0.0, 1.0, 1.0, 0.0])
    policy = Policy.deterministic([0] * 5, 2)
    return policy.action_probs[:, :, None] * values[None, None, :]


def load_sa_gap_fixture() -> NamedInstance:
    """
    Three states; at state 0 both actions share one factor w in conv{e_1, e_2}.

    Action 0 earns 1 on reaching state 1 and action 1 earns 1 on reaching
    state 2. Per pair the adversary can avoid both rewards, but one w has
    to serve both actions, so the uniform policy's worst case is 1/2 while
    the pair-wise dynamic programming value is 0.
    """
    S, A = 3, 2
    factor_sets = (np.stack([_unit(S, 1), _unit(S, 2)]), np.stack([_unit(S, 1)]), np.stack([_unit(S, 2)]))
    coefficients = np.zeros((S, A, 3))
    coefficients[0, :, 0] = 1.0
    coefficients[1, :, 1] = 1.0
    coefficients[2, :, 2] = 1.0
    rewards = np.zeros((S, A, S))
    rewards[0, 0, 1] = 1.0
    rewards[0, 1, 2] = 1.0
    mdp = MdpInstance(rewards, 0.5, _unit(S, 0))
    return NamedInstance(
        name="sa_gap_fixture",
        mdp=mdp,
        uncertainty=FactorModel(coefficients, factor_sets),
        provenance="frozen regression instance for next-state-dependent rewards on a factor model",
        expected=(
            ExpectedValue("robust_value(operator=T_hat_pi,policy=uniform,start=mu)", 0.0, 1e-6, "analytic"),
            ExpectedValue("robust_value(operator=T_pi,policy=uniform,start=mu)", 0.5, 1e-6, "analytic"),
            ExpectedValue("worst_case_value(start=mu,policy=uniform)", 0.5, 1e-5, "analytic"),
        ),
    )


# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorSpec:
    """
    Parameters of random_instance.

    Attributes:
        variant: One of the UncertaintySet variant names
        num_states, num_actions: Sizes
        vertices_per_component: Vertices of every block / distribution / factor / coefficient list
        num_factors: Factors of the factor-based variants
        num_kernels: Kernels of an explicit_finite set
        discount: gamma
        next_state_independent: Draw rewards r(s, a) instead of r(s, a, s')
    """
    variant: str = "s_rectangular"
    num_states: int = 3
    num_actions: int = 2
    vertices_per_component: int = 2
    num_factors: int = 2
    num_kernels: int = 4
    discount: float = 0.9
    next_state_independent: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInstanceError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        for name in ("num_states", "num_actions", "vertices_per_component", "num_factors", "num_kernels"):
            if getattr(self, name) < 1:
                raise InvalidInstanceError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.discount < 1.0:
            raise InvalidInstanceError(f"discount must lie in [0, 1), got {self.discount}")


def _random_set(spec: GeneratorSpec, rng: np.random.Generator) -> UncertaintySet:
    S, A, K, r = spec.num_states, spec.num_actions, spec.vertices_per_component, spec.num_factors
    simplex = lambda n, *shape: rng.dirichlet(np.ones(n), size=shape)
    factors = lambda: tuple(simplex(S, K) for _ in range(r))

    if spec.variant == "explicit_finite":
        return ExplicitFinite(tuple(TransitionKernel(simplex(S, S, A)) for _ in range(spec.num_kernels)))
    if spec.variant == "s_rectangular":
        return SRectangular(tuple(tuple(simplex(S, K, A)) for _ in range(S)))
    if spec.variant == "sa_rectangular":
        return SaRectangular(tuple(tuple(tuple(simplex(S, K)) for _ in range(A)) for _ in range(S)))
    if spec.variant == "factor_model":
        return FactorModel(simplex(r, S, A), factors())
    if spec.variant == "partitioned":
        split = max(1, S // 2)
        first, second = tuple(range(split)), tuple(range(split, S))
        s_part = tuple(tuple(simplex(S, K, A)) for _ in first)
        coefficients = simplex(r, len(second), A) if second else np.zeros((0, A, r))
        return Partitioned((first, second), s_part, coefficients, factors())
    if spec.variant == "coeff_factor":
        return CoeffFactor(factors(), tuple(simplex(r, K, A) for _ in range(S)))
    return SaCoeffFactor(factors(), tuple(tuple(simplex(r, K) for _ in range(A)) for _ in range(S)))


def random_instance(spec: GeneratorSpec, seed: Union[int, np.random.SeedSequence] = 0) -> NamedInstance:
    """
    Seeded random instance of the requested variant.

    The same (spec, seed) always yields the same numbers.
    """
    rng = np.random.default_rng(seed)
    uncertainty = _random_set(spec, rng)
    S, A = spec.num_states, spec.num_actions
    if spec.next_state_independent:
        rewards = np.repeat(rng.uniform(-1.0, 1.0, size=(S, A, 1)), S, axis=2)
    else:
        rewards = rng.uniform(-1.0, 1.0, size=(S, A, S))
    mdp = MdpInstance(rewards, spec.discount, rng.dirichlet(np.ones(S)))
    label = seed if isinstance(seed, int) else "seq"
    return NamedInstance(
        name=f"random_{spec.variant}_{label}",
        mdp=mdp,
        uncertainty=uncertainty,
        provenance=f"random_instance({spec})",
    )


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

LIBRARY: Dict[str, Callable[[], NamedInstance]] = {
    "example_3_1": load_example_3_1,
    "wiesemann_6state": load_wiesemann_6state,
    "example_4_2": load_example_4_2,
    "appendix_d": load_appendix_d,
    "sa_gap_fixture": load_sa_gap_fixture,
}


def library_names() -> Tuple[str, ...]:
    return tuple(LIBRARY)


def load_named(name: str) -> NamedInstance:
    """
    Raises:
        InvalidInstanceError: For an unknown name
    """
    if name not in LIBRARY:
        raise InvalidInstanceError(f"unknown library instance {name!r}; available: {', '.join(LIBRARY)}")
    return LIBRARY[name]()


def find_instance(reference: str, loader: Optional[Callable[[str], NamedInstance]] = None) -> NamedInstance:
    """A library name, or otherwise a path handed to ``loader``."""
    if reference in LIBRARY:
        return load_named(reference)
    if loader is None:
        raise InvalidInstanceError(f"{reference!r} is not a library instance")
    return loader(reference)
