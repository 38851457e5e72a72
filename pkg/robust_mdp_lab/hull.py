"""
Convex-hull membership by linear feasibility.

A point x lies in conv{v_1, ..., v_K} iff the linear program

    minimize   sum(t_plus) + sum(t_minus)
    subject to sum_k lam_k v_k + t_plus - t_minus = x
               sum_k lam_k = 1,  lam, t_plus, t_minus >= 0

has optimal value 0. The slack form keeps the LP feasible for every x, so
the optimum is the l1 distance from x to the hull (up to solver accuracy).
Dimensions here are tiny (a few hundred coordinates at most), which is why
no facet enumeration is attempted.
"""
import logging
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import NumericalError

logger = logging.getLogger(__name__)


HULL_TOL = 1e-9


def _as_rows(points) -> np.ndarray:
    rows = np.asarray(points, dtype=float)
    return rows.reshape(rows.shape[0], -1)


def hull_distance(point, vertices) -> float:
    """l1 distance from ``point`` to conv(vertices); both are flattened."""
    vertices = _as_rows(vertices)
    point = np.asarray(point, dtype=float).ravel()
    K, D = vertices.shape
    if point.shape[0] != D:
        raise ValueError(f"point has {point.shape[0]} coordinates, vertices have {D}")

    nearest = float(np.min(np.abs(vertices - point[None, :]).sum(axis=1)))
    if nearest <= HULL_TOL:
        return nearest

    identity = np.eye(D)
    a_eq = np.vstack([
        np.hstack([vertices.T, identity, -identity]),
        np.hstack([np.ones(K), np.zeros(2 * D)]),
    ])
    b_eq = np.concatenate([point, [1.0]])
    cost = np.concatenate([np.zeros(K), np.ones(2 * D)])
    result = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method='highs')
    if result.status != 0:
        raise NumericalError(f"hull membership LP failed: {result.message}")
    return max(0.0, float(result.fun))


def is_convex_combination(point, vertices, tol: float = HULL_TOL) -> bool:
    """True when ``point`` is a convex combination of ``vertices`` within tol."""
    return hull_distance(point, vertices) <= tol


def hull_contains_all(points: Sequence, vertices, tol: float = HULL_TOL) -> bool:
    """True when every point lies in conv(vertices)."""
    vertices = _as_rows(vertices)
    for index, point in enumerate(_as_rows(points)):
        if not is_convex_combination(point, vertices, tol):
            logger.debug(f"point {index} lies outside the hull")
            return False
    return True


def hulls_equal(first: Sequence, second: Sequence, tol: float = HULL_TOL) -> bool:
    """Mutual membership: conv(first) == conv(second)."""
    return hull_contains_all(first, second, tol) and hull_contains_all(second, first, tol)
