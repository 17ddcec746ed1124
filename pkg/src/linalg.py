"""Dense factorizations shared by the differentiation and distributed modules."""
import warnings

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from src.config import SINGULAR_RTOL


def factorize(matrix, rtol: float = SINGULAR_RTOL):
    """
    LU factors of a square matrix with partial pivoting.

    Returns None when the matrix is numerically singular, i.e. when the
    smallest pivot magnitude is below rtol times the largest one.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[0] == 0:
        return (matrix.copy(), np.zeros(0, dtype=np.int32))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(matrix, check_finite=False)
    if not np.all(np.isfinite(lu)):
        return None
    pivots = np.abs(np.diag(lu))
    if pivots.max() == 0.0 or pivots.min() <= rtol * pivots.max():
        return None
    return lu, piv


def solve_factored(factors, rhs):
    rhs = np.asarray(rhs, dtype=float)
    if factors[0].shape[0] == 0:
        return np.zeros(rhs.shape)
    if rhs.size == 0:
        return np.zeros(rhs.shape)
    return lu_solve(factors, rhs, check_finite=False)


def pivot_ratio(matrix) -> float:
    """Smallest over largest LU pivot magnitude (0.0 for exactly singular)."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[0] == 0:
        return 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, _ = lu_factor(matrix, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.max() == 0.0:
        return 0.0
    return float(pivots.min() / pivots.max())
