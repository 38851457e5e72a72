"""
Simultaneous-solvability checks.

For a fixed objective the strong property asks whether the per-state
(strong_s) or per-pair (strong_sa) linear minimizations over the set share
a common minimizer; the weak versions restrict the objective to the shape
produced by next-state-independent rewards (pi[s][a] * V[s'] for weak_s,
V[s'] for weak_sa).

The decision is made on vertices: for each coordinate the argmin vertex
indices (ties within TIE_TOL) are collected and intersected. For a
polytope the argmin sets are faces, an intersection of faces is a face,
and a non-empty face has a vertex, so an empty vertex intersection means
there is no common minimizer at all.

falsify_ssp samples objectives to search for a counterexample; a
"holds" answer from sampling is evidence only, except for the families
listed in STRUCTURAL_GUARANTEES.
"""
import enum
import logging
from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

import numpy as np

from .errors import BudgetExceededError, DimensionMismatchError, InvalidInstanceError
from .mdp_core import Policy, TransitionKernel, frozen_array
from .uncertainty_models import (
    DEFAULT_ENUMERATION_CAP,
    TIE_TOL,
    CoeffFactor,
    FactorModel,
    Partitioned,
    SaCoeffFactor,
    SaRectangular,
    SRectangular,
    UncertaintySet,
    min_linear_s,
    min_linear_sa,
    vertex_stack,
)

logger = logging.getLogger(__name__)


class SspMode(enum.Enum):
    STRONG_S = "strong_s"
    STRONG_SA = "strong_sa"
    WEAK_S = "weak_s"
    WEAK_SA = "weak_sa"


STRUCTURAL_GUARANTEES: Dict[type, FrozenSet[SspMode]] = {
    SRectangular: frozenset({SspMode.STRONG_S, SspMode.WEAK_S}),
    SaRectangular: frozenset(SspMode),
    FactorModel: frozenset({SspMode.WEAK_S, SspMode.WEAK_SA}),
    Partitioned: frozenset({SspMode.WEAK_S}),
    CoeffFactor: frozenset({SspMode.WEAK_S}),
    SaCoeffFactor: frozenset({SspMode.WEAK_S, SspMode.WEAK_SA}),
}


@dataclass(frozen=True, eq=False)
class ObjectiveTensor:
    """
    Objective of an SSP check.

    Attributes:
        entries: V[s][a][s'] (strong modes) or V[s'] (weak modes)
        policy: pi for the weak_s pair form (pi, V)
    """
    entries: np.ndarray
    policy: Optional[Policy] = None

    def __post_init__(self):
        entries = frozen_array(self.entries, "objective")
        if entries.ndim not in (1, 3):
            raise DimensionMismatchError(f"objective must be a vector or an (S, A, S) tensor, got {entries.shape}")
        object.__setattr__(self, "entries", entries)

    @property
    def form(self) -> str:
        if self.entries.ndim == 3:
            return "tensor"
        return "pair" if self.policy is not None else "vector"

    @classmethod
    def lift(cls, values, policy: Policy) -> "ObjectiveTensor":
        """Tensor form pi[s][a] * V[s'] of a weak_s objective."""
        values = np.asarray(values, dtype=float)
        return cls(policy.action_probs[:, :, None] * values[None, None, :])

    def to_list(self):
        return self.entries.tolist()


@dataclass(frozen=True, eq=False)
class SspVerdict:
    """
    Answer of an SSP check or falsification search.

    Attributes:
        holds: Whether a common minimizer exists (or no witness was found)
        mode: Which property was checked
        certificate: A common minimizer when holds
        certificate_index: Its vertex index, when found by enumeration
        witness_objective: Falsifying objective found by a search
        per_state_argmins: Argmin vertex indices per state (or per pair, row-major)
        samples_checked: Objectives examined by a search (0 for a single check)
        exact: False when holds rests on sampling evidence only
    """
    holds: bool
    mode: SspMode
    certificate: Optional[TransitionKernel] = None
    certificate_index: Optional[int] = None
    witness_objective: Optional[ObjectiveTensor] = None
    per_state_argmins: Tuple[Tuple[int, ...], ...] = ()
    samples_checked: int = 0
    exact: bool = True

    def to_dict(self) -> Dict:
        return {
            'mode': self.mode.value,
            'holds': self.holds,
            'exact': self.exact,
            'samples_checked': self.samples_checked,
            'certificate_index': self.certificate_index,
            'certificate': None if self.certificate is None else self.certificate.probs.tolist(),
            'witness_objective': None if self.witness_objective is None else self.witness_objective.to_list(),
            'witness_policy': (None if self.witness_objective is None or self.witness_objective.policy is None
                               else self.witness_objective.policy.action_probs.tolist()),
            'per_state_argmins': [list(indices) for indices in self.per_state_argmins],
        }


def structural_guarantee(uset: UncertaintySet, mode: Union[SspMode, str]) -> bool:
    """True when ``mode`` holds for every objective on this family of sets."""
    return SspMode(mode) in STRUCTURAL_GUARANTEES.get(type(uset), frozenset())


def _vertices(uset: UncertaintySet, cap: int) -> np.ndarray:
    memo = uset._memo()
    if 'vertex_stack' not in memo:
        memo['vertex_stack'] = vertex_stack(uset, cap)
    return memo['vertex_stack']


def _check_tensor(uset: UncertaintySet, objective: ObjectiveTensor) -> np.ndarray:
    shape = (uset.num_states, uset.num_actions, uset.num_states)
    if objective.entries.shape != shape:
        raise DimensionMismatchError(f"objective has shape {objective.entries.shape}, expected {shape}")
    return objective.entries


def _check_vector(uset: UncertaintySet, values) -> np.ndarray:
    values = np.asarray(values.entries if isinstance(values, ObjectiveTensor) else values, dtype=float)
    if values.shape != (uset.num_states,):
        raise DimensionMismatchError(f"state-value objective has shape {values.shape}, expected ({uset.num_states},)")
    if not np.all(np.isfinite(values)):
        raise InvalidInstanceError("objective contains NaN or infinite entries")
    return values


def _intersect(mode: SspMode, stack: np.ndarray, scores: np.ndarray) -> SspVerdict:
    """Argmin sets per column of ``scores`` (K x coordinates) and their intersection."""
    minima = scores.min(axis=0)
    mask = scores <= minima[None, :] + TIE_TOL
    per_coordinate = tuple(tuple(int(k) for k in np.flatnonzero(mask[:, c])) for c in range(scores.shape[1]))
    common = np.flatnonzero(mask.all(axis=1))
    if common.size == 0:
        return SspVerdict(False, mode, per_state_argmins=per_coordinate)
    index = int(common[0])
    return SspVerdict(True, mode, certificate=TransitionKernel(stack[index]),
                      certificate_index=index, per_state_argmins=per_coordinate)


def _decide_s(mode: SspMode, stack: np.ndarray, tensor: np.ndarray) -> SspVerdict:
    return _intersect(mode, stack, np.einsum('ksat,sat->ks', stack, tensor))


def _decide_sa(mode: SspMode, stack: np.ndarray, tensor: np.ndarray) -> SspVerdict:
    scores = np.einsum('ksat,sat->ksa', stack, tensor)
    return _intersect(mode, stack, scores.reshape(stack.shape[0], -1))


def check_strong_ssp_s(uset: UncertaintySet, objective: ObjectiveTensor,
                       cap: int = DEFAULT_ENUMERATION_CAP) -> SspVerdict:
    """
    Common minimizer of <P_s, V_s> over all states?

    Raises:
        BudgetExceededError: If the vertex enumeration exceeds cap
    """
    tensor = _check_tensor(uset, objective)
    return _decide_s(SspMode.STRONG_S, _vertices(uset, cap), tensor)


def check_strong_ssp_sa(uset: UncertaintySet, objective: ObjectiveTensor,
                        cap: int = DEFAULT_ENUMERATION_CAP) -> SspVerdict:
    """Common minimizer of <P_sa, V_sa> over all state-action pairs?"""
    tensor = _check_tensor(uset, objective)
    return _decide_sa(SspMode.STRONG_SA, _vertices(uset, cap), tensor)


def _weak_s_fallback(uset: UncertaintySet, policy: Policy, values: np.ndarray) -> Optional[SspVerdict]:
    certificate = uset.weak_certificate_s(policy, values)
    if certificate is None:
        return None
    for s in range(uset.num_states):
        objective = policy.action_probs[s][:, None] * values[None, :]
        best = min_linear_s(uset, s, objective, all_argmins=False).value
        attained = float(np.einsum('at,at->', certificate.probs[s], objective))
        if attained > best + TIE_TOL:
            return SspVerdict(False, SspMode.WEAK_S)
    return SspVerdict(True, SspMode.WEAK_S, certificate=certificate)


def _weak_sa_fallback(uset: UncertaintySet, values: np.ndarray) -> Optional[SspVerdict]:
    certificate = uset.weak_certificate_sa(values)
    if certificate is None:
        return None
    for s in range(uset.num_states):
        for a in range(uset.num_actions):
            best = min_linear_sa(uset, s, a, values, all_argmins=False).value
            if float(certificate.probs[s, a] @ values) > best + TIE_TOL:
                return SspVerdict(False, SspMode.WEAK_SA)
    return SspVerdict(True, SspMode.WEAK_SA, certificate=certificate)


def check_weak_ssp_s(uset: UncertaintySet, policy: Policy, values,
                     cap: int = DEFAULT_ENUMERATION_CAP) -> SspVerdict:
    """
    Common minimizer of sum_a pi[s][a] P[s][a].V over all states?

    Falls back to the model's factor-first certificate when enumeration is
    over the cap.
    """
    values = _check_vector(uset, values)
    if policy.action_probs.shape != (uset.num_states, uset.num_actions):
        raise DimensionMismatchError(f"policy shape {policy.action_probs.shape} does not fit the set")
    tensor = policy.action_probs[:, :, None] * values[None, None, :]
    try:
        return _decide_s(SspMode.WEAK_S, _vertices(uset, cap), tensor)
    except BudgetExceededError:
        verdict = _weak_s_fallback(uset, policy, values)
        if verdict is None:
            raise
        logger.warning(f"{uset.variant}: enumeration over cap, weak_s decided by constructive certificate")
        return verdict


def check_weak_ssp_sa(uset: UncertaintySet, values, cap: int = DEFAULT_ENUMERATION_CAP) -> SspVerdict:
    """Common minimizer of P[s][a].V over all state-action pairs?"""
    values = _check_vector(uset, values)
    tensor = np.broadcast_to(values, (uset.num_states, uset.num_actions, uset.num_states))
    try:
        return _decide_sa(SspMode.WEAK_SA, _vertices(uset, cap), tensor)
    except BudgetExceededError:
        verdict = _weak_sa_fallback(uset, values)
        if verdict is None:
            raise
        logger.warning(f"{uset.variant}: enumeration over cap, weak_sa decided by constructive certificate")
        return verdict


def check_ssp(uset: UncertaintySet, mode: Union[SspMode, str], objective: ObjectiveTensor,
              cap: int = DEFAULT_ENUMERATION_CAP) -> SspVerdict:
    """Dispatch one objective to the check of ``mode``."""
    mode = SspMode(mode)
    if mode is SspMode.STRONG_S:
        return check_strong_ssp_s(uset, objective, cap)
    if mode is SspMode.STRONG_SA:
        return check_strong_ssp_sa(uset, objective, cap)
    if mode is SspMode.WEAK_SA:
        return check_weak_ssp_sa(uset, objective, cap)
    if objective.policy is None:
        raise InvalidInstanceError("weak_s objectives need a policy")
    return check_weak_ssp_s(uset, objective.policy, objective.entries, cap)


def sample_objective(mode: SspMode, rng: np.random.Generator,
                     num_states: int, num_actions: int) -> ObjectiveTensor:
    """Entries uniform on [-1, 1]; weak_s policies uniform on the simplex."""
    if mode in (SspMode.STRONG_S, SspMode.STRONG_SA):
        return ObjectiveTensor(rng.uniform(-1.0, 1.0, size=(num_states, num_actions, num_states)))
    values = rng.uniform(-1.0, 1.0, size=num_states)
    if mode is SspMode.WEAK_SA:
        return ObjectiveTensor(values)
    policy = Policy(rng.dirichlet(np.ones(num_actions), size=num_states))
    return ObjectiveTensor(values, policy)


def falsify_ssp(uset: UncertaintySet, mode: Union[SspMode, str], num_samples: int = 1000,
                seed: int = 0, cap: int = DEFAULT_ENUMERATION_CAP) -> SspVerdict:
    """
    Search for an objective that breaks ``mode``.

    Sample i draws from its own child of SeedSequence(seed), so samples are
    independent of evaluation order; the lowest falsifying index is returned.

    Returns:
        The first failing verdict with its witness_objective, or holds=True
        with samples_checked = num_samples (exact only for structurally
        guaranteed families)
    """
    mode = SspMode(mode)
    if num_samples < 1:
        raise ValueError(f"num_samples must be >= 1, got {num_samples}")

    for index, child in enumerate(np.random.SeedSequence(seed).spawn(num_samples)):
        objective = sample_objective(mode, np.random.default_rng(child), uset.num_states, uset.num_actions)
        verdict = check_ssp(uset, mode, objective, cap)
        if not verdict.holds:
            logger.info(f"{mode.value} falsified on {uset.variant} at sample {index}")
            return replace(verdict, witness_objective=objective, samples_checked=index + 1)

    guaranteed = structural_guarantee(uset, mode)
    logger.info(f"{mode.value}: no witness in {num_samples} samples on {uset.variant} (structural={guaranteed})")
    return SspVerdict(True, mode, samples_checked=num_samples, exact=guaranteed)


def check_implication_chain(uset: UncertaintySet, policy: Policy, values,
                            cap: int = DEFAULT_ENUMERATION_CAP) -> List[str]:
    """
    Evaluate the four modes on one lifted input and list broken implications.

    The strong objective is pi[s][a] * V[s'], so on identical inputs
    strong_sa => strong_s => weak_s and strong_sa => weak_sa => weak_s.
    An empty list means the chain is consistent.
    """
    values = _check_vector(uset, values)
    lifted = ObjectiveTensor.lift(values, policy)
    holds = {
        'strong_sa': check_strong_ssp_sa(uset, lifted, cap).holds,
        'strong_s': check_strong_ssp_s(uset, lifted, cap).holds,
        'weak_s': check_weak_ssp_s(uset, policy, values, cap).holds,
        'weak_sa': check_weak_ssp_sa(uset, values, cap).holds,
    }
    broken = []
    for premise, conclusion in (('strong_sa', 'strong_s'), ('strong_s', 'weak_s'),
                                ('strong_sa', 'weak_sa'), ('weak_sa', 'weak_s')):
        if holds[premise] and not holds[conclusion]:
            broken.append(f"{premise} => {conclusion}")
    return broken
