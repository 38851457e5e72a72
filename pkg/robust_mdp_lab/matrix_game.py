"""
Zero-sum matrix games, solved exactly by a dense primal simplex.

The row player maximizes. With the payoff shifted to be >= 1, the column
player's program

    maximize sum(y)  subject to  A' y <= 1,  y >= 0

is feasible at the origin, so a single-phase simplex from the all-slack
basis suffices. Pivoting follows Bland's rule (lowest entering index,
lowest leaving basis index among ratio ties), which rules out cycling and
makes the returned strategies deterministic. The row strategy is read
from the optimal dual prices of the slack columns.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInstanceError, NumericalError

logger = logging.getLogger(__name__)


PIVOT_TOL = 1e-12
VALUE_TOL = 1e-9
MAX_PIVOTS = 10_000


@dataclass(frozen=True, eq=False)
class MatrixGame:
    """Payoff matrix of a zero-sum game; rows maximize, columns minimize."""
    payoff: np.ndarray

    def __post_init__(self):
        payoff = np.array(self.payoff, dtype=float)
        if payoff.ndim != 2 or 0 in payoff.shape:
            raise InvalidInstanceError(f"payoff must be a non-empty matrix, got shape {payoff.shape}")
        if not np.all(np.isfinite(payoff)):
            raise InvalidInstanceError("payoff contains NaN or infinite entries")
        payoff.setflags(write=False)
        object.__setattr__(self, "payoff", payoff)


@dataclass(frozen=True, eq=False)
class GameSolution:
    """
    Optimal strategies and value of a matrix game.

    Attributes:
        row_strategy: Maximizing mixed strategy over rows
        column_strategy: Minimizing mixed strategy over columns
        value: Game value
        pivots: Number of simplex pivots performed
    """
    row_strategy: np.ndarray
    column_strategy: np.ndarray
    value: float
    pivots: int


def _pivot(tableau: np.ndarray, row: int, column: int) -> None:
    tableau[row] /= tableau[row, column]
    for other in range(tableau.shape[0]):
        if other != row and tableau[other, column] != 0.0:
            tableau[other] -= tableau[other, column] * tableau[row]


def _normalise(weights: np.ndarray) -> np.ndarray:
    weights = np.clip(weights, 0.0, None)
    return weights / weights.sum()


def solve_matrix_game(game: MatrixGame) -> GameSolution:
    """
    Value and optimal mixed strategies of ``game``.

    Raises:
        NumericalError: If the simplex exceeds MAX_PIVOTS or the returned
            strategies do not certify the value within VALUE_TOL

    Examples:
        >>> solve_matrix_game(MatrixGame([[1, -1], [-1, 1]])).row_strategy
        array([0.5, 0.5])
    """
    payoff = game.payoff
    m, n = payoff.shape
    shift = 1.0 - float(payoff.min())

    tableau = np.zeros((m + 1, n + m + 1))
    tableau[:m, :n] = payoff + shift
    tableau[:m, n:n + m] = np.eye(m)
    tableau[:m, -1] = 1.0
    tableau[m, :n] = -1.0
    basis = list(range(n, n + m))

    pivots = 0
    while True:
        reduced = tableau[m, :-1]
        entering = next((j for j in range(n + m) if reduced[j] < -PIVOT_TOL), None)
        if entering is None:
            break

        candidates = [
            (tableau[i, -1] / tableau[i, entering], basis[i], i)
            for i in range(m) if tableau[i, entering] > PIVOT_TOL
        ]
        if not candidates:
            raise NumericalError("matrix game LP reported unbounded; payoff shift failed")
        best_ratio = min(c[0] for c in candidates)
        leaving = min((c for c in candidates if c[0] <= best_ratio + PIVOT_TOL), key=lambda c: c[1])[2]

        _pivot(tableau, leaving, entering)
        basis[leaving] = entering
        pivots += 1
        if pivots > MAX_PIVOTS:
            raise NumericalError(f"simplex exceeded {MAX_PIVOTS} pivots on a {m}x{n} game")

    total = float(tableau[m, -1])
    primal = np.zeros(n + m)
    for i, variable in enumerate(basis):
        primal[variable] = tableau[i, -1]

    row_strategy = _normalise(tableau[m, n:n + m].copy())
    column_strategy = _normalise(primal[:n])
    value = 1.0 / total - shift

    guaranteed = float(np.min(row_strategy @ payoff))
    conceded = float(np.max(payoff @ column_strategy))
    scale = max(1.0, float(np.max(np.abs(payoff))))
    if abs(guaranteed - value) > VALUE_TOL * scale or abs(conceded - value) > VALUE_TOL * scale:
        raise NumericalError(
            f"simplex strategies do not certify the value {value:.12g} "
            f"(row guarantees {guaranteed:.12g}, column concedes {conceded:.12g})"
        )
    logger.debug(f"solved {m}x{n} game in {pivots} pivot(s), value {value:.12g}")
    return GameSolution(row_strategy, column_strategy, value, pivots)
