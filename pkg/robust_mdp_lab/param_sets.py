"""
Parametric descriptions of uncertainty sets for the grid oracles.

A ParamSet maps a box of named scalar parameters onto transition kernels.
Two forms exist:

- AffineParamSet: kernel = offset + sum_k theta_k * coefficients[k], the
  form used by the hand-built library instances ("p" and "1 - p" entries).
  Validity is checked at every box corner, which suffices because both
  non-negativity and row sums are affine in theta.
- HullParamSet: the convex hull of a vertex-represented UncertaintySet,
  one stick-breaking block of coordinates per component. Every model here
  is multilinear in its component weights, so a kernel is the
  product-weighted sum of the enumerated vertices.

Grid points are numbered in C order with parameter 0 most significant;
the oracles rely on that order for lowest-index tie-breaking.
"""
import abc
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import BudgetExceededError, DimensionMismatchError, InvalidInstanceError
from .mdp_core import STOCHASTIC_TOL, TransitionKernel, check_distribution_rows, frozen_array
from .uncertainty_models import (
    DEFAULT_ENUMERATION_CAP,
    ExplicitFinite,
    UncertaintySet,
    _deduplicate,
    vertex_stack,
)

logger = logging.getLogger(__name__)


DEFAULT_GRID_RESOLUTION = 101
HULL_GRID_POINTS = 200_000
MAX_CORNER_PARAMETERS = 20
PRODUCT_BATCH_ENTRIES = 2**22


@dataclass(frozen=True)
class Parameter:
    """A named scalar parameter ranging over [low, high]."""
    name: str
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not self.name:
            raise InvalidInstanceError("parameter name must not be empty")
        low, high = float(self.low), float(self.high)
        if not (math.isfinite(low) and math.isfinite(high)) or low > high:
            raise InvalidInstanceError(f"parameter {self.name} has invalid range [{low}, {high}]")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def width(self) -> float:
        return self.high - self.low

    def axis(self, resolution: int) -> np.ndarray:
        return np.linspace(self.low, self.high, resolution)


class ParamSet(abc.ABC):
    """Common interface of the parametric sets searched by the oracles."""

    parameters: Tuple[Parameter, ...]
    grid_resolution: int

    @property
    @abc.abstractmethod
    def num_states(self) -> int:
        ...

    @property
    @abc.abstractmethod
    def num_actions(self) -> int:
        ...

    @abc.abstractmethod
    def kernels_at(self, thetas: np.ndarray) -> np.ndarray:
        """Kernels for a batch of parameter vectors, shape (N, K) -> (N, S, A, S)."""

    @abc.abstractmethod
    def vertex_set(self) -> UncertaintySet:
        """Vertex representation of the hull of the parametrized kernels."""

    @property
    def num_parameters(self) -> int:
        return len(self.parameters)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(p.name for p in self.parameters)

    @property
    def lows(self) -> np.ndarray:
        return np.array([p.low for p in self.parameters], dtype=float)

    @property
    def highs(self) -> np.ndarray:
        return np.array([p.high for p in self.parameters], dtype=float)

    def grid_size(self, resolution: Optional[int] = None) -> int:
        resolution = self.grid_resolution if resolution is None else resolution
        return resolution ** self.num_parameters

    def grid_step(self, resolution: Optional[int] = None) -> np.ndarray:
        resolution = self.grid_resolution if resolution is None else resolution
        return (self.highs - self.lows) / (resolution - 1)

    def grid_points(self, indices: np.ndarray, resolution: Optional[int] = None) -> np.ndarray:
        """Parameter vectors of flat grid indices, shape (N, K)."""
        resolution = self.grid_resolution if resolution is None else resolution
        indices = np.asarray(indices, dtype=np.int64)
        if self.num_parameters == 0:
            return np.zeros((indices.shape[0], 0))
        coords = np.stack(np.unravel_index(indices, (resolution,) * self.num_parameters), axis=1)
        return self.lows + coords * self.grid_step(resolution)

    def iter_grid(self, batch_size: int = 4096,
                  resolution: Optional[int] = None) -> Iterator[Tuple[int, np.ndarray]]:
        """(first flat index, parameter batch) pairs covering the grid in order."""
        total = self.grid_size(resolution)
        for start in range(0, total, batch_size):
            stop = min(total, start + batch_size)
            yield start, self.grid_points(np.arange(start, stop), resolution)

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lows, self.highs)

    def kernel_at(self, theta) -> TransitionKernel:
        theta = np.asarray(theta, dtype=float).reshape(1, self.num_parameters)
        return TransitionKernel(self.kernels_at(theta)[0])

    def describe(self) -> dict:
        return {
            'parametric': type(self).__name__,
            'parameters': [{'name': p.name, 'low': p.low, 'high': p.high} for p in self.parameters],
            'grid_resolution': self.grid_resolution,
            'grid_size': self.grid_size(),
        }


def _check_resolution(resolution: int) -> int:
    resolution = int(resolution)
    if resolution < 2:
        raise InvalidInstanceError(f"grid resolution must be at least 2, got {resolution}")
    return resolution


@dataclass(frozen=True, eq=False)
class AffineParamSet(ParamSet):
    """
    Kernels affine in a box of parameters.

    Attributes:
        parameters: Named parameters with their ranges
        offset: Kernel part independent of the parameters, shape (S, A, S)
        coefficients: One (S, A, S) tensor per parameter, shape (K, S, A, S)
        grid_resolution: Grid points per parameter for the oracles
    """
    parameters: Tuple[Parameter, ...]
    offset: np.ndarray
    coefficients: np.ndarray
    grid_resolution: int = DEFAULT_GRID_RESOLUTION

    def __post_init__(self):
        parameters = tuple(self.parameters)
        names = [p.name for p in parameters]
        if len(set(names)) != len(names):
            raise InvalidInstanceError(f"duplicate parameter names: {names}")
        offset = frozen_array(self.offset, "kernel offset")
        if offset.ndim != 3 or offset.shape[0] != offset.shape[2]:
            raise DimensionMismatchError(f"kernel offset must have shape (S, A, S), got {offset.shape}")
        coefficients = frozen_array(np.reshape(self.coefficients, (len(parameters),) + offset.shape),
                                    "kernel coefficients")
        if len(parameters) > MAX_CORNER_PARAMETERS:
            raise BudgetExceededError(
                f"{len(parameters)} parameters give too many box corners to validate",
                requested=2 ** len(parameters), limit=2 ** MAX_CORNER_PARAMETERS,
            )
        object.__setattr__(self, "parameters", parameters)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "coefficients", coefficients)
        object.__setattr__(self, "grid_resolution", _check_resolution(self.grid_resolution))

        for corner in self._corners():
            kernel = self.kernels_at(corner[None])[0]
            try:
                check_distribution_rows(kernel, "kernel", STOCHASTIC_TOL)
            except InvalidInstanceError as e:
                where = ", ".join(f"{n}={v:g}" for n, v in zip(names, corner))
                raise InvalidInstanceError(f"kernel template is not stochastic at corner ({where}): {e}") from e

    @property
    def num_states(self) -> int:
        return self.offset.shape[0]

    @property
    def num_actions(self) -> int:
        return self.offset.shape[1]

    def _corners(self) -> np.ndarray:
        ranges = [(p.low, p.high) for p in self.parameters]
        return np.array(list(itertools.product(*ranges)), dtype=float).reshape(-1, len(ranges))

    def kernels_at(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim != 2 or thetas.shape[1] != self.num_parameters:
            raise DimensionMismatchError(f"expected parameter batch (N, {self.num_parameters}), got {thetas.shape}")
        return self.offset[None] + np.tensordot(thetas, self.coefficients, axes=1)

    def vertex_set(self) -> ExplicitFinite:
        """Corner kernels, deduplicated; their hull is the hull of the whole family."""
        memo = self.__dict__.setdefault('_memo_store', {})
        if 'vertex_set' not in memo:
            corners = self.kernels_at(self._corners())
            kernels = _deduplicate(list(np.clip(corners, 0.0, None)))
            memo['vertex_set'] = ExplicitFinite(tuple(TransitionKernel(k) for k in kernels))
        return memo['vertex_set']

    def entry_expression(self, s: int, a: int, t: int) -> Tuple[float, Tuple[float, ...]]:
        """(constant, per-parameter coefficients) of one kernel entry."""
        return float(self.offset[s, a, t]), tuple(float(c) for c in self.coefficients[:, s, a, t])


def stick_breaking_weights(coords: np.ndarray) -> np.ndarray:
    """
    Map (N, K-1) coordinates in [0, 1] onto (N, K) points of the simplex.

    w_1 = t_1, w_j = t_j * prod_{i<j} (1 - t_i), w_K = prod (1 - t_i).

    Examples:
        >>> stick_breaking_weights(np.array([[0.5]]))
        array([[0.5, 0.5]])
    """
    coords = np.asarray(coords, dtype=float)
    n, k = coords.shape[0], coords.shape[1] + 1
    remaining = np.ones((n, k))
    if k > 1:
        remaining[:, 1:] = np.cumprod(1.0 - coords, axis=1)
    weights = remaining.copy()
    weights[:, :-1] *= coords
    return weights


@dataclass(frozen=True, eq=False)
class HullParamSet(ParamSet):
    """
    conv of a vertex-represented set, in stick-breaking coordinates.

    Components with a single vertex contribute no coordinates.
    """
    base: UncertaintySet
    grid_resolution: Optional[int] = None
    cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        sizes = [c.size for c in self.base.components]
        parameters = tuple(
            Parameter(f"c{c}_t{j}")
            for c, size in enumerate(sizes) for j in range(1, size)
        )
        object.__setattr__(self, "parameters", parameters)
        object.__setattr__(self, "_sizes", tuple(sizes))
        resolution = self.grid_resolution
        if resolution is None:
            resolution = auto_resolution(len(parameters))
        object.__setattr__(self, "grid_resolution", _check_resolution(resolution))
        object.__setattr__(self, "_vertices",
                           vertex_stack(self.base, self.cap).reshape(-1, self.num_states ** 2 * self.num_actions))

    @property
    def num_states(self):
        return self.base.num_states

    @property
    def num_actions(self):
        return self.base.num_actions

    def vertex_set(self) -> UncertaintySet:
        return self.base

    def product_weights(self, thetas: np.ndarray) -> np.ndarray:
        """Weight of every enumerated vertex, shape (N, V), enumeration order."""
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim != 2 or thetas.shape[1] != self.num_parameters:
            raise DimensionMismatchError(f"expected parameter batch (N, {self.num_parameters}), got {thetas.shape}")
        n = thetas.shape[0]
        product = np.ones((n, 1))
        start = 0
        for size in self._sizes:
            weights = stick_breaking_weights(thetas[:, start:start + size - 1])
            start += size - 1
            product = (product[:, :, None] * weights[:, None, :]).reshape(n, -1)
        return product

    def kernels_at(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        shape = (self.num_states, self.num_actions, self.num_states)
        rows = max(1, PRODUCT_BATCH_ENTRIES // self._vertices.shape[0])
        out = np.empty((thetas.shape[0],) + shape)
        for start in range(0, thetas.shape[0], rows):
            chunk = self.product_weights(thetas[start:start + rows]) @ self._vertices
            out[start:start + rows] = chunk.reshape((-1,) + shape)
        return out


def auto_resolution(num_parameters: int, budget: int = HULL_GRID_POINTS) -> int:
    """Largest resolution <= 101 whose full grid stays within ``budget`` points (at least 2)."""
    if num_parameters == 0:
        return DEFAULT_GRID_RESOLUTION
    resolution = min(DEFAULT_GRID_RESOLUTION, int(math.floor(budget ** (1.0 / num_parameters) + 1e-9)))
    return max(2, resolution)


def as_param_set(source: Union[ParamSet, UncertaintySet],
                 grid_resolution: Optional[int] = None) -> ParamSet:
    """Wrap a vertex-represented set in its hull parametrization; ParamSets pass through."""
    if isinstance(source, ParamSet):
        return source
    if isinstance(source, UncertaintySet):
        return HullParamSet(source, grid_resolution)
    raise TypeError(f"expected an UncertaintySet or ParamSet, got {type(source).__name__}")


def underlying_set(source: Union[ParamSet, UncertaintySet]) -> UncertaintySet:
    """Vertex representation used by the operators, the SSP checker and rectangularity tests."""
    if isinstance(source, ParamSet):
        return source.vertex_set()
    return source


def parameter_names(source: Union[ParamSet, UncertaintySet]) -> Sequence[str]:
    return source.names if isinstance(source, ParamSet) else ()
