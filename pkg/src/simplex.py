"""
Dense two-phase tableau simplex with Bland's rule, sized for the shrinking LPs

    maximize c.x  subject to  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0

Returned solutions are basic, so at most (number of rows) variables are nonzero.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from .errors import InfeasibleError, SolverError

logger = logging.getLogger(__name__)

TOLERANCE = 1e-10
MAX_PIVOTS = 50000


def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    for i in range(tableau.shape[0]):
        if i != row and tableau[i, col] != 0.0:
            tableau[i] -= tableau[i, col] * tableau[row]
    basis[row] = col


def _optimize(tableau: np.ndarray, basis: np.ndarray, cost: np.ndarray, allowed: np.ndarray) -> None:
    """Primal simplex on the tableau rows for `cost`; Bland's rule picks entering and leaving columns"""
    for _ in range(MAX_PIVOTS):
        reduced = cost - cost[basis] @ tableau[:, :-1]
        entering = np.flatnonzero((reduced > TOLERANCE) & allowed)
        if entering.size == 0:
            return
        col = int(entering[0])
        column = tableau[:, col]
        candidates = np.flatnonzero(column > TOLERANCE)
        if candidates.size == 0:
            raise SolverError("linear program is unbounded")
        ratios = tableau[candidates, -1] / column[candidates]
        best = ratios.min()
        ties = candidates[ratios <= best + TOLERANCE]
        row = int(ties[np.argmin(basis[ties])])
        _pivot(tableau, basis, row, col)
    raise SolverError(f"simplex did not terminate within {MAX_PIVOTS} pivots")


def linprog_max(c: np.ndarray, A_ub: Optional[np.ndarray] = None, b_ub: Optional[np.ndarray] = None,
                A_eq: Optional[np.ndarray] = None, b_eq: Optional[np.ndarray] = None) -> Tuple[np.ndarray, float]:
    """Optimal basic solution and objective value; InfeasibleError when no x satisfies the rows"""
    c = np.asarray(c, dtype=float)
    n = len(c)
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = len(A_ub), len(A_eq)
    m = m_ub + m_eq

    # equality form: original columns, one slack per inequality, one artificial per row
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0

    width = n + m_ub
    tableau = np.hstack([A, np.eye(m), b[:, None]])
    basis = np.arange(width, width + m)

    phase_one = np.concatenate([np.zeros(width), -np.ones(m)])
    _optimize(tableau, basis, phase_one, np.ones(width + m, dtype=bool))
    infeasibility = tableau[basis >= width, -1].sum()
    if infeasibility > 1e-9:
        raise InfeasibleError(f"linear program is infeasible (phase-one residual {infeasibility:.3g})")

    # drive zero-valued artificials out of the basis; rows that cannot pivot are redundant
    keep = np.ones(m, dtype=bool)
    for row in range(m):
        if basis[row] < width:
            continue
        nonzero = np.flatnonzero(np.abs(tableau[row, :width]) > TOLERANCE)
        if nonzero.size:
            _pivot(tableau, basis, row, int(nonzero[0]))
        else:
            keep[row] = False
    tableau = np.hstack([tableau[keep][:, :width], tableau[keep][:, -1:]])
    basis = basis[keep]

    cost = np.concatenate([c, np.zeros(m_ub)])
    _optimize(tableau, basis, cost, np.ones(width, dtype=bool))

    solution = np.zeros(width)
    solution[basis] = tableau[:, -1]
    x = np.maximum(solution[:n], 0.0)
    return x, float(c @ x)
