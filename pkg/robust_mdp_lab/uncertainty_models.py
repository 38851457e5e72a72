"""
Uncertainty-set models, their marginals, rectangular extensions and
inner-minimization oracles.

Every convex set is stored by finite vertex lists. Each model is a product
of independent *components* (a list of per-state blocks, of per-pair
distributions, of factor vertices or of coefficient vertices); a kernel is
assembled from one convex weight vector per component, and the vertices
of the model are the one-hot choices. Enumeration walks the choices in
lexicographic order with component 0 most significant, and that order
defines the vertex index reported by the SSP checker.

Variants:
- ExplicitFinite: a finite list of kernels (also the vertex list of its hull)
- SRectangular: product over states of per-state block lists
- SaRectangular: product over (s, a) of distribution lists
- FactorModel: P[s][a] = sum_i u[s][a][i] w^i, fixed u, each w^i in conv(W^i)
- Partitioned: SRectangular on a first group of states, factor model on the rest
- CoeffFactor: factors as above, coefficient matrix u^s in conv(U^s) per state
- SaCoeffFactor: factors as above, coefficient vector u^{sa} in conv(U^{sa}) per pair
"""
import abc
import itertools
import logging
import math
from dataclasses import dataclass
from typing import ClassVar, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BudgetExceededError, DimensionMismatchError, InvalidInstanceError
from .hull import hulls_equal
from .mdp_core import (
    Policy,
    TransitionKernel,
    check_distribution_rows,
    frozen_array,
)

logger = logging.getLogger(__name__)


DEFAULT_ENUMERATION_CAP = 10**6
TIE_TOL = 1e-9
DEDUP_TOL = 1e-12
MEMBERSHIP_TOL = 1e-9
RANK_ONE_TOL = 1e-12
BATCH_SIZE = 4096


@dataclass(frozen=True, eq=False)
class Component:
    """
    One independent choice inside a model.

    Attributes:
        label: Human-readable name ("state 2", "factor 0", "coeff (1,0)")
        vertices: Stacked vertices, first axis indexes the vertex
    """
    label: str
    vertices: np.ndarray

    @property
    def size(self) -> int:
        return self.vertices.shape[0]


@dataclass(frozen=True, eq=False)
class LinearMinimum:
    """
    Result of a linear minimization over a marginal.

    Attributes:
        value: Minimum objective value
        argmins: Minimizing blocks (A x S) or distributions (S,)
        method: "enumeration" or "constructive"
    """
    value: float
    argmins: Tuple[np.ndarray, ...]
    method: str


def _distribution_stack(vertices, name: str) -> np.ndarray:
    stack = frozen_array(vertices, name)
    if stack.ndim < 2 or stack.shape[0] == 0:
        raise InvalidInstanceError(f"{name} needs at least one vertex")
    check_distribution_rows(stack, name)
    return stack


def _first_argmin(scores: np.ndarray) -> int:
    return int(np.argmin(scores))


def _factor_stacks(factor_sets, num_states: Optional[int] = None) -> Tuple[np.ndarray, ...]:
    stacks = tuple(_distribution_stack(vs, f"factor set {i}") for i, vs in enumerate(factor_sets))
    if not stacks:
        raise InvalidInstanceError("a factor model needs at least one factor")
    for i, stack in enumerate(stacks):
        if stack.ndim != 2:
            raise DimensionMismatchError(f"factor set {i} must be a list of distributions")
        if num_states is not None and stack.shape[1] != num_states:
            raise DimensionMismatchError(
                f"factor set {i} has distributions over {stack.shape[1]} states, expected {num_states}"
            )
    widths = {stack.shape[1] for stack in stacks}
    if len(widths) != 1:
        raise DimensionMismatchError(f"factor sets disagree on the number of states: {sorted(widths)}")
    return stacks


def _rank_one_weights(objective: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """
    Write objective[a] = offsets[a] * 1 + alpha[a] * direction with alpha >= 0, if possible.

    This is the shape of the inner objective pi[s][a] * (r[s, a] + gamma * V)
    that makes a factors-first minimization exact. Every row the set places
    on (s, a) is a distribution, so the offsets only shift the value by
    offsets.sum() and never move the argmin.
    """
    scale = float(np.max(np.abs(objective)))
    offsets = objective.mean(axis=1)
    centered = objective - offsets[:, None]
    if scale == 0.0 or float(np.max(np.abs(centered))) == 0.0:
        return np.zeros(objective.shape[0]), np.zeros(objective.shape[1]), offsets
    direction = centered[int(np.argmax(np.abs(centered).sum(axis=1)))]
    alpha = centered @ direction / float(direction @ direction)
    if np.min(alpha) < -RANK_ONE_TOL:
        return None
    if np.max(np.abs(centered - np.outer(alpha, direction))) > RANK_ONE_TOL * scale:
        return None
    return np.maximum(alpha, 0.0), direction, offsets


class UncertaintySet(abc.ABC):
    """
    Common interface of every vertex-represented uncertainty set.

    Subclasses describe their components and how to assemble the rows
    leaving one state from a weight vector per component; enumeration,
    marginals, extensions and rectangularity tests are generic.
    """

    variant: ClassVar[str] = ""

    @property
    @abc.abstractmethod
    def num_states(self) -> int:
        ...

    @property
    @abc.abstractmethod
    def num_actions(self) -> int:
        ...

    @property
    @abc.abstractmethod
    def components(self) -> Tuple[Component, ...]:
        ...

    @abc.abstractmethod
    def state_components(self, state: int) -> Tuple[int, ...]:
        """Indices of the components that influence the rows leaving ``state``."""

    @abc.abstractmethod
    def assemble_block(self, state: int, weights: Sequence[Optional[np.ndarray]]) -> np.ndarray:
        """A x S block of ``state`` for convex weights (only state_components are read)."""

    def pair_components(self, state: int, action: int) -> Tuple[int, ...]:
        return self.state_components(state)

    def assemble_pair(self, state: int, action: int,
                      weights: Sequence[Optional[np.ndarray]]) -> np.ndarray:
        return self.assemble_block(state, weights)[action]

    def constructive_min_s(self, state: int, objective: np.ndarray) -> Optional[LinearMinimum]:
        """Structured minimizer of <P_s, M>; None when the model has none for this objective."""
        return None

    def constructive_min_sa(self, state: int, action: int,
                            objective: np.ndarray) -> Optional[LinearMinimum]:
        return None

    def weak_certificate_s(self, policy: Policy, values: np.ndarray) -> Optional[TransitionKernel]:
        """Kernel minimizing sum_a pi[s][a] P[s][a].V at every state at once, if constructible."""
        return None

    def weak_certificate_sa(self, values: np.ndarray) -> Optional[TransitionKernel]:
        """Kernel minimizing P[s][a].V at every pair at once, if constructible."""
        return None

    def contains(self, kernel: TransitionKernel, tol: float = MEMBERSHIP_TOL) -> bool:
        """Vertex-level membership; rectangular variants override with a per-block test."""
        for vertex in iter_vertices(self):
            if vertex.allclose(kernel, tol):
                return True
        return False

    def _memo(self) -> Dict:
        return self.__dict__.setdefault('_memo_store', {})

    def describe(self) -> Dict:
        return {
            'variant': self.variant,
            'num_states': self.num_states,
            'num_actions': self.num_actions,
            'components': [f"{c.label} ({c.size})" for c in self.components],
            'vertex_count': vertex_count(self),
        }


# ---------------------------------------------------------------------------
# Variants
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExplicitFinite(UncertaintySet):
    """A finite set of kernels, also the vertex list of its convex hull."""
    kernels: Tuple[TransitionKernel, ...]

    variant: ClassVar[str] = "explicit_finite"

    def __post_init__(self):
        kernels = tuple(k if isinstance(k, TransitionKernel) else TransitionKernel(k)
                        for k in self.kernels)
        if not kernels:
            raise InvalidInstanceError("explicit set needs at least one kernel")
        shapes = {k.probs.shape for k in kernels}
        if len(shapes) != 1:
            raise DimensionMismatchError(f"kernels disagree on shape: {sorted(shapes)}")
        object.__setattr__(self, "kernels", kernels)
        stack = np.stack([k.probs for k in kernels])
        stack.setflags(write=False)
        object.__setattr__(self, "_stack", stack)

    @property
    def num_states(self) -> int:
        return self._stack.shape[1]

    @property
    def num_actions(self) -> int:
        return self._stack.shape[2]

    @property
    def components(self) -> Tuple[Component, ...]:
        return (Component("kernels", self._stack),)

    def state_components(self, state: int) -> Tuple[int, ...]:
        return (0,)

    def assemble_block(self, state, weights):
        return np.tensordot(weights[0], self._stack[:, state], axes=1)


@dataclass(frozen=True, eq=False)
class SRectangular(UncertaintySet):
    """Product over states of finite lists of A x S blocks."""
    per_state: Tuple[Tuple[np.ndarray, ...], ...]

    variant: ClassVar[str] = "s_rectangular"

    def __post_init__(self):
        stacks = tuple(_distribution_stack(blocks, f"blocks of state {s}")
                       for s, blocks in enumerate(self.per_state))
        if not stacks:
            raise InvalidInstanceError("s-rectangular set needs at least one state")
        num_states = len(stacks)
        for s, stack in enumerate(stacks):
            if stack.ndim != 3 or stack.shape[2] != num_states or stack.shape[1] != stacks[0].shape[1]:
                raise DimensionMismatchError(
                    f"blocks of state {s} have shape {stack.shape[1:]}, expected (A, {num_states})"
                )
        object.__setattr__(self, "per_state", tuple(tuple(stack) for stack in stacks))
        object.__setattr__(self, "_stacks", stacks)

    @property
    def num_states(self) -> int:
        return len(self._stacks)

    @property
    def num_actions(self) -> int:
        return self._stacks[0].shape[1]

    @property
    def components(self):
        return tuple(Component(f"state {s}", stack) for s, stack in enumerate(self._stacks))

    def state_components(self, state):
        return (state,)

    def assemble_block(self, state, weights):
        return np.tensordot(weights[state], self._stacks[state], axes=1)

    def weak_certificate_s(self, policy, values):
        weights = []
        for s, stack in enumerate(self._stacks):
            scores = np.einsum('kat,a,t->k', stack, policy.action_probs[s], values)
            weights.append(_one_hot(stack.shape[0], _first_argmin(scores)))
        return assemble_kernel(self, weights)

    def contains(self, kernel, tol=MEMBERSHIP_TOL):
        return all(
            float(np.min(np.max(np.abs(stack - kernel.probs[s][None]), axis=(1, 2)))) <= tol
            for s, stack in enumerate(self._stacks)
        )


@dataclass(frozen=True, eq=False)
class SaRectangular(UncertaintySet):
    """Product over state-action pairs of finite lists of distributions."""
    per_state_action: Tuple[Tuple[Tuple[np.ndarray, ...], ...], ...]

    variant: ClassVar[str] = "sa_rectangular"

    def __post_init__(self):
        if not self.per_state_action:
            raise InvalidInstanceError("sa-rectangular set needs at least one state")
        num_states = len(self.per_state_action)
        num_actions = len(self.per_state_action[0])
        stacks = []
        for s, per_action in enumerate(self.per_state_action):
            if len(per_action) != num_actions or num_actions == 0:
                raise DimensionMismatchError(f"state {s} lists {len(per_action)} actions, expected {num_actions}")
            for a, dists in enumerate(per_action):
                stack = _distribution_stack(dists, f"distributions of pair ({s},{a})")
                if stack.ndim != 2 or stack.shape[1] != num_states:
                    raise DimensionMismatchError(
                        f"pair ({s},{a}) distributions must have length {num_states}"
                    )
                stacks.append(stack)
        object.__setattr__(self, "_stacks", tuple(stacks))
        object.__setattr__(self, "_shape", (num_states, num_actions))
        object.__setattr__(self, "per_state_action", tuple(
            tuple(tuple(stacks[s * num_actions + a]) for a in range(num_actions))
            for s in range(num_states)
        ))

    @property
    def num_states(self):
        return self._shape[0]

    @property
    def num_actions(self):
        return self._shape[1]

    def _pair(self, state, action) -> int:
        return state * self.num_actions + action

    @property
    def components(self):
        A = self.num_actions
        return tuple(Component(f"pair ({i // A},{i % A})", stack) for i, stack in enumerate(self._stacks))

    def state_components(self, state):
        start = self._pair(state, 0)
        return tuple(range(start, start + self.num_actions))

    def pair_components(self, state, action):
        return (self._pair(state, action),)

    def assemble_block(self, state, weights):
        return np.stack([self.assemble_pair(state, a, weights) for a in range(self.num_actions)])

    def assemble_pair(self, state, action, weights):
        index = self._pair(state, action)
        return weights[index] @ self._stacks[index]

    def constructive_min_s(self, state, objective):
        block = []
        value = 0.0
        for a in range(self.num_actions):
            stack = self._stacks[self._pair(state, a)]
            scores = stack @ objective[a]
            best = _first_argmin(scores)
            value += float(scores[best])
            block.append(stack[best])
        return LinearMinimum(value, (np.stack(block),), "constructive")

    def weak_certificate_s(self, policy, values):
        return self.weak_certificate_sa(values)

    def weak_certificate_sa(self, values):
        weights = [_one_hot(stack.shape[0], _first_argmin(stack @ values)) for stack in self._stacks]
        return assemble_kernel(self, weights)

    def contains(self, kernel, tol=MEMBERSHIP_TOL):
        for s in range(self.num_states):
            for a in range(self.num_actions):
                stack = self._stacks[self._pair(s, a)]
                if float(np.min(np.max(np.abs(stack - kernel.probs[s, a][None]), axis=1))) > tol:
                    return False
        return True


class _FactorMixin:
    """Shared helpers for models built on factor sets W^i."""

    _factors: Tuple[np.ndarray, ...]

    @property
    def num_factors(self) -> int:
        return len(self._factors)

    def _factor_mixtures(self, weights, offset: int, used: Sequence[int]) -> np.ndarray:
        mixtures = np.zeros((self.num_factors, self._factors[0].shape[1]))
        for i in used:
            mixtures[i] = weights[offset + i] @ self._factors[i]
        return mixtures

    def _factor_minima(self, direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Per-factor minimum of <w, direction> and the first minimizing vertex index."""
        minima = np.empty(self.num_factors)
        choices = np.empty(self.num_factors, dtype=int)
        for i, stack in enumerate(self._factors):
            scores = stack @ direction
            choices[i] = _first_argmin(scores)
            minima[i] = scores[choices[i]]
        return minima, choices

    def _factor_weights(self, choices: np.ndarray) -> List[np.ndarray]:
        return [_one_hot(stack.shape[0], int(k)) for stack, k in zip(self._factors, choices)]


@dataclass(frozen=True, eq=False)
class FactorModel(_FactorMixin, UncertaintySet):
    """
    r-rectangular set: P[s][a] = sum_i coefficients[s][a][i] * w^i.

    Attributes:
        coefficients: Fixed mixing weights u[s][a][.], each a distribution over factors
        factor_sets: Vertex list of each factor set W^i (distributions over states)
    """
    coefficients: np.ndarray
    factor_sets: Tuple[np.ndarray, ...]

    variant: ClassVar[str] = "factor_model"

    def __post_init__(self):
        coefficients = frozen_array(self.coefficients, "factor coefficients")
        if coefficients.ndim != 3:
            raise DimensionMismatchError(f"coefficients must have shape (S, A, r), got {coefficients.shape}")
        check_distribution_rows(coefficients, "factor coefficients")
        factors = _factor_stacks(self.factor_sets, coefficients.shape[0])
        if len(factors) != coefficients.shape[2]:
            raise DimensionMismatchError(
                f"{coefficients.shape[2]} coefficients per row but {len(factors)} factor sets"
            )
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "factor_sets", factors)
        object.__setattr__(self, "_factors", factors)

    @property
    def num_states(self):
        return self.coefficients.shape[0]

    @property
    def num_actions(self):
        return self.coefficients.shape[1]

    @property
    def components(self):
        return tuple(Component(f"factor {i}", stack) for i, stack in enumerate(self._factors))

    def state_components(self, state):
        return tuple(int(i) for i in np.flatnonzero(self.coefficients[state].max(axis=0) > 0))

    def pair_components(self, state, action):
        return tuple(int(i) for i in np.flatnonzero(self.coefficients[state, action] > 0))

    def assemble_block(self, state, weights):
        mixtures = self._factor_mixtures(weights, 0, self.state_components(state))
        return self.coefficients[state] @ mixtures

    def assemble_pair(self, state, action, weights):
        mixtures = self._factor_mixtures(weights, 0, self.pair_components(state, action))
        return self.coefficients[state, action] @ mixtures

    def constructive_min_s(self, state, objective):
        # <P_s, M> = sum_i <w^i, sum_a u[s][a][i] M[a]>, factors are independent
        directions = self.coefficients[state].T @ objective
        used = self.state_components(state)
        value = 0.0
        chosen = np.zeros((self.num_factors, self.num_states))
        for i in used:
            scores = self._factors[i] @ directions[i]
            best = _first_argmin(scores)
            value += float(scores[best])
            chosen[i] = self._factors[i][best]
        return LinearMinimum(value, (self.coefficients[state] @ chosen,), "constructive")

    def constructive_min_sa(self, state, action, objective):
        minima, choices = self._factor_minima(objective)
        u = self.coefficients[state, action]
        chosen = np.stack([self._factors[i][k] for i, k in enumerate(choices)])
        return LinearMinimum(float(u @ minima), (u @ chosen,), "constructive")

    def weak_certificate_s(self, policy, values):
        return self.weak_certificate_sa(values)

    def weak_certificate_sa(self, values):
        _, choices = self._factor_minima(values)
        return assemble_kernel(self, self._factor_weights(choices))


@dataclass(frozen=True, eq=False)
class Partitioned(_FactorMixin, UncertaintySet):
    """
    s-rectangular on the first group of states, factor model on the second.

    Attributes:
        state_split: (first group, second group), a partition of the states
        s_part: Block lists of the first-group states, in group order
        factor_coefficients: u[s][a][i] for the second-group states, in group order
        factor_sets: Vertex lists of the factor sets shared by the second group
    """
    state_split: Tuple[Tuple[int, ...], Tuple[int, ...]]
    s_part: Tuple[Tuple[np.ndarray, ...], ...]
    factor_coefficients: np.ndarray
    factor_sets: Tuple[np.ndarray, ...]

    variant: ClassVar[str] = "partitioned"

    def __post_init__(self):
        first = tuple(int(s) for s in self.state_split[0])
        second = tuple(int(s) for s in self.state_split[1])
        num_states = len(first) + len(second)
        if sorted(first + second) != list(range(num_states)):
            raise InvalidInstanceError(f"state split {first} / {second} is not a partition of the states")
        if len(self.s_part) != len(first):
            raise DimensionMismatchError(f"{len(self.s_part)} block lists for {len(first)} first-group states")

        coefficients = frozen_array(self.factor_coefficients, "factor coefficients")
        if coefficients.ndim != 3 or coefficients.shape[0] != len(second):
            raise DimensionMismatchError(
                f"factor coefficients must have shape ({len(second)}, A, r), got {coefficients.shape}"
            )
        if second:
            check_distribution_rows(coefficients, "factor coefficients")
        factors = _factor_stacks(self.factor_sets, num_states)
        if len(factors) != coefficients.shape[2]:
            raise DimensionMismatchError(f"{coefficients.shape[2]} coefficients per row but {len(factors)} factor sets")

        stacks = tuple(_distribution_stack(blocks, f"blocks of state {s}") for s, blocks in zip(first, self.s_part))
        num_actions = coefficients.shape[1] if second else stacks[0].shape[1]
        for s, stack in zip(first, stacks):
            if stack.ndim != 3 or stack.shape[1:] != (num_actions, num_states):
                raise DimensionMismatchError(f"blocks of state {s} must have shape ({num_actions}, {num_states})")

        object.__setattr__(self, "state_split", (first, second))
        object.__setattr__(self, "s_part", tuple(tuple(stack) for stack in stacks))
        object.__setattr__(self, "factor_coefficients", coefficients)
        object.__setattr__(self, "factor_sets", factors)
        object.__setattr__(self, "_factors", factors)
        object.__setattr__(self, "_stacks", stacks)
        object.__setattr__(self, "_shape", (num_states, num_actions))
        object.__setattr__(self, "_position", {s: i for i, s in enumerate(first)})
        object.__setattr__(self, "_second_position", {s: i for i, s in enumerate(second)})

    @property
    def num_states(self):
        return self._shape[0]

    @property
    def num_actions(self):
        return self._shape[1]

    @property
    def _offset(self) -> int:
        return len(self._stacks)

    @property
    def components(self):
        first = tuple(Component(f"state {s}", stack) for s, stack in zip(self.state_split[0], self._stacks))
        return first + tuple(Component(f"factor {i}", stack) for i, stack in enumerate(self._factors))

    def _used_factors(self, state) -> Tuple[int, ...]:
        u = self.factor_coefficients[self._second_position[state]]
        return tuple(int(i) for i in np.flatnonzero(u.max(axis=0) > 0))

    def state_components(self, state):
        if state in self._position:
            return (self._position[state],)
        return tuple(self._offset + i for i in self._used_factors(state))

    def assemble_block(self, state, weights):
        if state in self._position:
            index = self._position[state]
            return np.tensordot(weights[index], self._stacks[index], axes=1)
        mixtures = self._factor_mixtures(weights, self._offset, self._used_factors(state))
        return self.factor_coefficients[self._second_position[state]] @ mixtures

    def constructive_min_s(self, state, objective):
        if state in self._position:
            return None
        u = self.factor_coefficients[self._second_position[state]]
        directions = u.T @ objective
        value = 0.0
        chosen = np.zeros((self.num_factors, self.num_states))
        for i in self._used_factors(state):
            scores = self._factors[i] @ directions[i]
            best = _first_argmin(scores)
            value += float(scores[best])
            chosen[i] = self._factors[i][best]
        return LinearMinimum(value, (u @ chosen,), "constructive")

    def weak_certificate_s(self, policy, values):
        weights = []
        for s, stack in zip(self.state_split[0], self._stacks):
            scores = np.einsum('kat,a,t->k', stack, policy.action_probs[s], values)
            weights.append(_one_hot(stack.shape[0], _first_argmin(scores)))
        _, choices = self._factor_minima(values)
        return assemble_kernel(self, weights + self._factor_weights(choices))


@dataclass(frozen=True, eq=False)
class CoeffFactor(_FactorMixin, UncertaintySet):
    """
    Factors and per-state coefficient matrices both uncertain.

    Attributes:
        factor_sets: Vertex lists of W^i, shared by all states
        coeff_sets: For each state, vertex list of A x r coefficient matrices
    """
    factor_sets: Tuple[np.ndarray, ...]
    coeff_sets: Tuple[np.ndarray, ...]

    variant: ClassVar[str] = "coeff_factor"

    def __post_init__(self):
        if not self.coeff_sets:
            raise InvalidInstanceError("coefficient-factor model needs at least one state")
        factors = _factor_stacks(self.factor_sets, len(self.coeff_sets))
        coeffs = tuple(_distribution_stack(vs, f"coefficient set of state {s}")
                       for s, vs in enumerate(self.coeff_sets))
        num_actions = coeffs[0].shape[1]
        for s, stack in enumerate(coeffs):
            if stack.ndim != 3 or stack.shape[1:] != (num_actions, len(factors)):
                raise DimensionMismatchError(
                    f"coefficient vertices of state {s} must have shape ({num_actions}, {len(factors)})"
                )
        object.__setattr__(self, "factor_sets", factors)
        object.__setattr__(self, "coeff_sets", coeffs)
        object.__setattr__(self, "_factors", factors)

    @property
    def num_states(self):
        return len(self.coeff_sets)

    @property
    def num_actions(self):
        return self.coeff_sets[0].shape[1]

    @property
    def components(self):
        factors = tuple(Component(f"factor {i}", stack) for i, stack in enumerate(self._factors))
        return factors + tuple(Component(f"coeff state {s}", stack) for s, stack in enumerate(self.coeff_sets))

    def _used_factors(self, state) -> Tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.coeff_sets[state].max(axis=(0, 1)) > 0))

    def state_components(self, state):
        return self._used_factors(state) + (self.num_factors + state,)

    def assemble_block(self, state, weights):
        mixtures = self._factor_mixtures(weights, 0, self._used_factors(state))
        u = np.tensordot(weights[self.num_factors + state], self.coeff_sets[state], axes=1)
        return u @ mixtures

    def constructive_min_s(self, state, objective):
        coeffs = self.coeff_sets[state]
        rank_one = _rank_one_weights(objective)
        if rank_one is not None:
            # factors first: every factor minimizes <w^i, direction> for any coefficients
            alpha, direction, offsets = rank_one
            minima, choices = self._factor_minima(direction)
            scores = np.einsum('a,lai,i->l', alpha, coeffs, minima)
            best = _first_argmin(scores)
            chosen = np.stack([self._factors[i][k] for i, k in enumerate(choices)])
            return LinearMinimum(float(scores[best] + offsets.sum()), (coeffs[best] @ chosen,), "constructive")

        best_value, best_block = math.inf, None
        for u in coeffs:
            directions = u.T @ objective
            value = 0.0
            chosen = np.zeros((self.num_factors, self.num_states))
            for i in self._used_factors(state):
                scores = self._factors[i] @ directions[i]
                k = _first_argmin(scores)
                value += float(scores[k])
                chosen[i] = self._factors[i][k]
            if value < best_value - TIE_TOL:
                best_value, best_block = value, u @ chosen
        return LinearMinimum(best_value, (best_block,), "constructive")

    def constructive_min_sa(self, state, action, objective):
        minima, choices = self._factor_minima(objective)
        rows = self.coeff_sets[state][:, action, :]
        scores = rows @ minima
        best = _first_argmin(scores)
        chosen = np.stack([self._factors[i][k] for i, k in enumerate(choices)])
        return LinearMinimum(float(scores[best]), (rows[best] @ chosen,), "constructive")

    def weak_certificate_s(self, policy, values):
        minima, choices = self._factor_minima(values)
        weights = self._factor_weights(choices)
        for s, coeffs in enumerate(self.coeff_sets):
            scores = np.einsum('a,lai,i->l', policy.action_probs[s], coeffs, minima)
            weights.append(_one_hot(coeffs.shape[0], _first_argmin(scores)))
        return assemble_kernel(self, weights)


@dataclass(frozen=True, eq=False)
class SaCoeffFactor(_FactorMixin, UncertaintySet):
    """
    Factors uncertain, coefficient vectors uncertain independently per pair.

    Attributes:
        factor_sets: Vertex lists of W^i, shared by all pairs
        coeff_sets: coeff_sets[s][a] is the vertex list of u^{sa} (distributions over factors)
    """
    factor_sets: Tuple[np.ndarray, ...]
    coeff_sets: Tuple[Tuple[np.ndarray, ...], ...]

    variant: ClassVar[str] = "sa_coeff_factor"

    def __post_init__(self):
        factors = _factor_stacks(self.factor_sets, len(self.coeff_sets))
        if not self.coeff_sets or not self.coeff_sets[0]:
            raise InvalidInstanceError("sa coefficient sets need at least one pair")
        num_actions = len(self.coeff_sets[0])
        pairs = []
        for s, per_action in enumerate(self.coeff_sets):
            if len(per_action) != num_actions:
                raise DimensionMismatchError(f"state {s} lists {len(per_action)} actions, expected {num_actions}")
            for a, vs in enumerate(per_action):
                stack = _distribution_stack(vs, f"coefficient set of pair ({s},{a})")
                if stack.ndim != 2 or stack.shape[1] != len(factors):
                    raise DimensionMismatchError(f"coefficients of pair ({s},{a}) must have length {len(factors)}")
                pairs.append(stack)
        object.__setattr__(self, "factor_sets", factors)
        object.__setattr__(self, "_factors", factors)
        object.__setattr__(self, "_pairs", tuple(pairs))
        object.__setattr__(self, "_shape", (len(self.coeff_sets), num_actions))
        object.__setattr__(self, "coeff_sets", tuple(
            tuple(pairs[s * num_actions + a] for a in range(num_actions)) for s in range(len(self.coeff_sets))
        ))

    @property
    def num_states(self):
        return self._shape[0]

    @property
    def num_actions(self):
        return self._shape[1]

    def _pair(self, state, action) -> int:
        return state * self.num_actions + action

    @property
    def components(self):
        A = self.num_actions
        factors = tuple(Component(f"factor {i}", stack) for i, stack in enumerate(self._factors))
        return factors + tuple(Component(f"coeff pair ({i // A},{i % A})", stack) for i, stack in enumerate(self._pairs))

    def _used_factors(self, state, action=None) -> Tuple[int, ...]:
        actions = range(self.num_actions) if action is None else (action,)
        peak = np.max([self._pairs[self._pair(state, a)].max(axis=0) for a in actions], axis=0)
        return tuple(int(i) for i in np.flatnonzero(peak > 0))

    def state_components(self, state):
        pairs = tuple(self.num_factors + self._pair(state, a) for a in range(self.num_actions))
        return self._used_factors(state) + pairs

    def pair_components(self, state, action):
        return self._used_factors(state, action) + (self.num_factors + self._pair(state, action),)

    def assemble_block(self, state, weights):
        return np.stack([self.assemble_pair(state, a, weights) for a in range(self.num_actions)])

    def assemble_pair(self, state, action, weights):
        mixtures = self._factor_mixtures(weights, 0, self._used_factors(state, action))
        index = self._pair(state, action)
        return (weights[self.num_factors + index] @ self._pairs[index]) @ mixtures

    def constructive_min_sa(self, state, action, objective):
        minima, choices = self._factor_minima(objective)
        stack = self._pairs[self._pair(state, action)]
        scores = stack @ minima
        best = _first_argmin(scores)
        chosen = np.stack([self._factors[i][k] for i, k in enumerate(choices)])
        return LinearMinimum(float(scores[best]), (stack[best] @ chosen,), "constructive")

    def constructive_min_s(self, state, objective):
        rank_one = _rank_one_weights(objective)
        if rank_one is None:
            return None
        alpha, direction, offsets = rank_one
        minima, choices = self._factor_minima(direction)
        chosen = np.stack([self._factors[i][k] for i, k in enumerate(choices)])
        value = float(offsets.sum())
        rows = []
        for a in range(self.num_actions):
            stack = self._pairs[self._pair(state, a)]
            scores = stack @ minima
            best = _first_argmin(scores)
            value += float(alpha[a] * scores[best])
            rows.append(stack[best] @ chosen)
        return LinearMinimum(value, (np.stack(rows),), "constructive")

    def weak_certificate_s(self, policy, values):
        return self.weak_certificate_sa(values)

    def weak_certificate_sa(self, values):
        minima, choices = self._factor_minima(values)
        weights = self._factor_weights(choices)
        for stack in self._pairs:
            weights.append(_one_hot(stack.shape[0], _first_argmin(stack @ minima)))
        return assemble_kernel(self, weights)


VARIANTS = {
    cls.variant: cls
    for cls in (ExplicitFinite, SRectangular, SaRectangular, FactorModel,
                Partitioned, CoeffFactor, SaCoeffFactor)
}


# ---------------------------------------------------------------------------
# Generic operations
# ---------------------------------------------------------------------------

def _one_hot(size: int, index: int) -> np.ndarray:
    weights = np.zeros(size)
    weights[index] = 1.0
    return weights


def _check_cap(count: int, cap: int, what: str) -> None:
    if count > cap:
        raise BudgetExceededError(
            f"{what} would produce {count} items, above the cap of {cap}; "
            f"use a constructive minimizer or raise the cap",
            requested=count, limit=cap,
        )


def vertex_count(uset: UncertaintySet) -> int:
    """Number of enumerated vertices (exact integer product, nothing is built)."""
    return math.prod(component.size for component in uset.components)


def assemble_kernel(uset: UncertaintySet, weights: Sequence[np.ndarray]) -> TransitionKernel:
    """
    Kernel of the hull point given one convex weight vector per component.

    With one-hot weights this is a vertex of the model.
    """
    components = uset.components
    if len(weights) != len(components):
        raise DimensionMismatchError(f"{len(weights)} weight vectors for {len(components)} components")
    blocks = [uset.assemble_block(s, weights) for s in range(uset.num_states)]
    return TransitionKernel(np.stack(blocks))


def iter_vertices(uset: UncertaintySet) -> Iterator[TransitionKernel]:
    """Vertices in enumeration order (component 0 most significant)."""
    components = uset.components
    for choice in itertools.product(*(range(c.size) for c in components)):
        yield assemble_kernel(uset, [_one_hot(c.size, k) for c, k in zip(components, choice)])


def enumerate_vertices(uset: UncertaintySet,
                       cap: int = DEFAULT_ENUMERATION_CAP) -> List[TransitionKernel]:
    """
    Every kernel formed by combining component vertices.

    Raises:
        BudgetExceededError: If the product of component counts exceeds cap
    """
    _check_cap(vertex_count(uset), cap, f"enumerating the {uset.variant} set")
    return list(iter_vertices(uset))


def iter_vertex_batches(uset: UncertaintySet, cap: int = DEFAULT_ENUMERATION_CAP,
                        batch_size: int = BATCH_SIZE) -> Iterator[np.ndarray]:
    """Vertices stacked in arrays of shape (<= batch_size, S, A, S), in enumeration order."""
    _check_cap(vertex_count(uset), cap, f"enumerating the {uset.variant} set")
    if isinstance(uset, ExplicitFinite):
        for start in range(0, len(uset.kernels), batch_size):
            yield uset._stack[start:start + batch_size]
        return
    batch = []
    for kernel in iter_vertices(uset):
        batch.append(kernel.probs)
        if len(batch) == batch_size:
            yield np.stack(batch)
            batch = []
    if batch:
        yield np.stack(batch)


def vertex_stack(uset: UncertaintySet, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """All vertices as one array of shape (K, S, A, S)."""
    return np.concatenate(list(iter_vertex_batches(uset, cap)))


def _deduplicate(items: Sequence[np.ndarray], tol: float = DEDUP_TOL) -> List[np.ndarray]:
    kept: List[np.ndarray] = []
    for item in items:
        if not any(float(np.max(np.abs(item - other))) <= tol for other in kept):
            kept.append(item)
    return kept


def _check_state(uset: UncertaintySet, state: int, action: Optional[int] = None) -> None:
    if not 0 <= state < uset.num_states:
        raise DimensionMismatchError(f"state {state} out of range for {uset.num_states} states")
    if action is not None and not 0 <= action < uset.num_actions:
        raise DimensionMismatchError(f"action {action} out of range for {uset.num_actions} actions")


def marginal_s(uset: UncertaintySet, state: int, cap: int = DEFAULT_ENUMERATION_CAP) -> List[np.ndarray]:
    """
    Distinct A x S blocks the set can place on ``state`` (deduplicated within 1e-12).

    Only the components that touch ``state`` are enumerated, so the result
    equals the projection of enumerate_vertices without building it.
    """
    _check_state(uset, state)
    memo = uset._memo()
    key = ('s', state)
    if key not in memo:
        components = uset.components
        involved = uset.state_components(state)
        _check_cap(math.prod(components[c].size for c in involved), cap, f"marginal of state {state}")
        blocks = []
        weights: List[Optional[np.ndarray]] = [None] * len(components)
        for choice in itertools.product(*(range(components[c].size) for c in involved)):
            for c, k in zip(involved, choice):
                weights[c] = _one_hot(components[c].size, k)
            blocks.append(uset.assemble_block(state, weights))
        memo[key] = _deduplicate(blocks)
    return memo[key]


def marginal_sa(uset: UncertaintySet, state: int, action: int,
                cap: int = DEFAULT_ENUMERATION_CAP) -> List[np.ndarray]:
    """Distinct next-state distributions the set can place on (state, action)."""
    _check_state(uset, state, action)
    memo = uset._memo()
    key = ('sa', state, action)
    if key not in memo:
        components = uset.components
        involved = uset.pair_components(state, action)
        _check_cap(math.prod(components[c].size for c in involved), cap, f"marginal of pair ({state},{action})")
        rows = []
        weights: List[Optional[np.ndarray]] = [None] * len(components)
        for choice in itertools.product(*(range(components[c].size) for c in involved)):
            for c, k in zip(involved, choice):
                weights[c] = _one_hot(components[c].size, k)
            rows.append(uset.assemble_pair(state, action, weights))
        memo[key] = _deduplicate(rows)
    return memo[key]


def marginal_stack_s(uset: UncertaintySet, state: int, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """marginal_s as one array of shape (K, A, S)."""
    memo = uset._memo()
    key = ('stack', state)
    if key not in memo:
        memo[key] = np.stack(marginal_s(uset, state, cap))
    return memo[key]


def s_extension(uset: UncertaintySet, cap: int = DEFAULT_ENUMERATION_CAP) -> SRectangular:
    """Smallest s-rectangular set containing ``uset``: the product of its state marginals."""
    if isinstance(uset, SRectangular):
        return uset
    return SRectangular(tuple(tuple(marginal_s(uset, s, cap)) for s in range(uset.num_states)))


def sa_extension(uset: UncertaintySet, cap: int = DEFAULT_ENUMERATION_CAP) -> SaRectangular:
    """Smallest sa-rectangular set containing ``uset``: the product of its pair marginals."""
    if isinstance(uset, SaRectangular):
        return uset
    return SaRectangular(tuple(
        tuple(tuple(marginal_sa(uset, s, a, cap)) for a in range(uset.num_actions))
        for s in range(uset.num_states)
    ))


def _ties(value: float, candidates: np.ndarray, scores: np.ndarray) -> Tuple[np.ndarray, ...]:
    return tuple(candidates[k] for k in np.flatnonzero(scores <= value + TIE_TOL))


def min_linear_s(uset: UncertaintySet, state: int, objective, method: str = "auto",
                 cap: int = DEFAULT_ENUMERATION_CAP, all_argmins: bool = True) -> LinearMinimum:
    """
    Minimize <P_s, M> over the set, M an A x S matrix.

    Args:
        method: "auto" (constructive when available, else enumeration),
            "constructive" or "enumeration"
        all_argmins: Collect every tied marginal block. With False the
            constructive path returns its single argmin and never enumerates.

    Returns:
        LinearMinimum; argmins holds every marginal block within TIE_TOL of
        the minimum, except when a constructive minimum was found and the
        marginal is over the cap, in which case it holds the constructive one

    Raises:
        BudgetExceededError: Enumeration needed but over the cap
        ValueError: "constructive" requested for a model without one
    """
    _check_state(uset, state)
    objective = np.asarray(objective, dtype=float)
    if objective.shape != (uset.num_actions, uset.num_states):
        raise DimensionMismatchError(
            f"objective has shape {objective.shape}, expected ({uset.num_actions}, {uset.num_states})"
        )
    if not np.all(np.isfinite(objective)):
        raise InvalidInstanceError("objective contains NaN or infinite entries")

    if method in ("auto", "constructive"):
        result = uset.constructive_min_s(state, objective)
        if result is not None:
            if not all_argmins:
                return result
            try:
                blocks = marginal_stack_s(uset, state, cap)
            except BudgetExceededError:
                logger.debug(f"{uset.variant}: marginal of state {state} over the cap, keeping one argmin")
                return result
            ties = _ties(result.value, blocks, np.einsum('kat,at->k', blocks, objective))
            return LinearMinimum(result.value, ties or result.argmins, result.method)
        if method == "constructive":
            raise ValueError(f"{uset.variant} has no constructive minimizer for state {state} and this objective")
    elif method != "enumeration":
        raise ValueError(f"unknown minimization method: {method}")

    blocks = marginal_stack_s(uset, state, cap)
    scores = np.einsum('kat,at->k', blocks, objective)
    best = float(scores.min())
    return LinearMinimum(best, _ties(best, blocks, scores), "enumeration")


def min_linear_sa(uset: UncertaintySet, state: int, action: int, objective, method: str = "auto",
                  cap: int = DEFAULT_ENUMERATION_CAP, all_argmins: bool = True) -> LinearMinimum:
    """Minimize <P_sa, w> over the set, w a length-S vector (see min_linear_s)."""
    _check_state(uset, state, action)
    objective = np.asarray(objective, dtype=float)
    if objective.shape != (uset.num_states,):
        raise DimensionMismatchError(f"objective has shape {objective.shape}, expected ({uset.num_states},)")
    if not np.all(np.isfinite(objective)):
        raise InvalidInstanceError("objective contains NaN or infinite entries")

    if method in ("auto", "constructive"):
        result = uset.constructive_min_sa(state, action, objective)
        if result is not None:
            if not all_argmins:
                return result
            try:
                rows = np.stack(marginal_sa(uset, state, action, cap))
            except BudgetExceededError:
                logger.debug(f"{uset.variant}: marginal of pair ({state},{action}) over the cap, keeping one argmin")
                return result
            ties = _ties(result.value, rows, rows @ objective)
            return LinearMinimum(result.value, ties or result.argmins, result.method)
        if method == "constructive":
            raise ValueError(f"{uset.variant} has no constructive pair minimizer")
    elif method != "enumeration":
        raise ValueError(f"unknown minimization method: {method}")

    rows = np.stack(marginal_sa(uset, state, action, cap))
    scores = rows @ objective
    best = float(scores.min())
    return LinearMinimum(best, _ties(best, rows, scores), "enumeration")


def contains_kernel(uset: UncertaintySet, kernel: TransitionKernel, tol: float = MEMBERSHIP_TOL) -> bool:
    """True when ``kernel`` is an element of the vertex representation of ``uset``."""
    if kernel.probs.shape != (uset.num_states, uset.num_actions, uset.num_states):
        raise DimensionMismatchError(f"kernel shape {kernel.probs.shape} does not fit the set")
    return uset.contains(kernel, tol)


def to_explicit(uset: UncertaintySet, cap: int = DEFAULT_ENUMERATION_CAP) -> ExplicitFinite:
    if isinstance(uset, ExplicitFinite):
        return uset
    return ExplicitFinite(tuple(enumerate_vertices(uset, cap)))


def is_s_rectangular(uset: UncertaintySet, cap: int = DEFAULT_ENUMERATION_CAP) -> bool:
    """
    True iff conv(vertices) equals conv(s-extension vertices).

    Decided by mutual convex-combination feasibility of the two vertex lists.
    """
    if isinstance(uset, (SRectangular, SaRectangular)):
        return True
    own = vertex_stack(uset, cap)
    extension = vertex_stack(s_extension(uset, cap), cap)
    verdict = hulls_equal(own, extension)
    logger.info(f"{uset.variant}: s-rectangular={verdict} ({len(own)} vs {len(extension)} vertices)")
    return verdict


def is_sa_rectangular(uset: UncertaintySet, cap: int = DEFAULT_ENUMERATION_CAP) -> bool:
    """True iff conv(vertices) equals conv(sa-extension vertices)."""
    if isinstance(uset, SaRectangular):
        return True
    own = vertex_stack(uset, cap)
    extension = vertex_stack(sa_extension(uset, cap), cap)
    verdict = hulls_equal(own, extension)
    logger.info(f"{uset.variant}: sa-rectangular={verdict} ({len(own)} vs {len(extension)} vertices)")
    return verdict
