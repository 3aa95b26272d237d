"""Numerical kernels: truncated SVD, MGS basis extension, ILU-GMRES and
smallest singular values.

Dense matrices are plain ``numpy.ndarray`` (float64), sparse ones are
``scipy.sparse`` matrices. All functions are pure.
"""

from dataclasses import dataclass
import logging

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidInputError, NumericFailureError, PivotBreakdownError

__all__ = [
    "SvdResult",
    "IterativeSolveReport",
    "Preconditioner",
    "truncated_svd",
    "energy_rank",
    "orth_extend",
    "ilu_factor",
    "gmres_solve",
    "smallest_singular_value",
]

log = logging.getLogger(__name__)

DEFAULT_DEFLATION_TOL = 1e-10
DEFAULT_DROP_TOL = 1e-3
DEFAULT_RESTART = 50
# Above this size smallest_singular_value still densifies; callers at that
# scale should not rely on it.
DENSE_SIGMA_LIMIT = 4000


@dataclass(frozen=True)
class SvdResult:
    """Truncated singular value decomposition ``M ~ U diag(s) W^T``."""

    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray

    @property
    def rank(self):
        return self.singular_values.size


@dataclass(frozen=True)
class IterativeSolveReport:
    solution: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


def _fix_signs(U, W):
    # Largest-magnitude entry of every left vector made non-negative.
    if U.shape[1] == 0:
        return U, W
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, W * signs


def energy_rank(s, eps):
    """Smallest ``r`` with ``sum(s[r:]) / sum(s) < eps`` over nonzero ``s``.

    ``s`` must already be restricted to the nonzero singular values.
    """
    if s.size == 0:
        return 0
    total = s.sum()
    # tails[r] = sum(s[r:]) for r = 0..len(s)
    tails = np.concatenate([np.cumsum(s[::-1])[::-1], [0.0]])
    r = int(np.argmax(tails / total < eps))
    return max(r, 1)


def _numerical_rank(s, shape):
    if s.size == 0 or s[0] == 0.0:
        return 0
    tol = max(shape) * np.finfo(float).eps * s[0]
    return int(np.count_nonzero(s > tol))


def truncated_svd(M, count=None, energy=None):
    """Truncated SVD of a dense matrix.

    Exactly one of ``count`` (keep ``min(count, rank)`` triplets) or
    ``energy`` (tail-sum rule on the nonzero singular values) must be given.
    Returns singular vectors with a deterministic sign convention.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.size == 0:
        raise InvalidInputError("truncated_svd needs a non-empty 2-D matrix")
    if (count is None) == (energy is None):
        raise InvalidInputError("give exactly one of count= or energy=")
    if count is not None and not 1 <= count <= min(M.shape):
        raise InvalidInputError(f"count must lie in [1, {min(M.shape)}], got {count}")
    if energy is not None and not 0.0 < energy < 1.0:
        raise InvalidInputError(f"energy tolerance must lie in (0, 1), got {energy}")
    if not np.all(np.isfinite(M)):
        raise NumericFailureError("non-finite entries in SVD input")

    U, s, Wt = la.svd(M, full_matrices=False, lapack_driver="gesdd")
    rank = _numerical_rank(s, M.shape)
    if count is not None:
        r = min(count, rank)
    else:
        r = energy_rank(s[:rank], energy)
    U, W = _fix_signs(U[:, :r], Wt[:r].T)
    return SvdResult(U.copy(), s[:r].copy(), W.copy())


def orth_extend(V, newcols, deflation_tol=DEFAULT_DEFLATION_TOL):
    """Append ``newcols`` to the orthonormal ``V`` by modified Gram-Schmidt.

    Existing columns stay first and untouched. A candidate whose norm after
    projection falls below ``deflation_tol`` times its incoming norm is
    dropped. Two MGS passes are done per column.
    """
    newcols = np.asarray(newcols, dtype=float)
    if newcols.ndim == 1:
        newcols = newcols[:, None]
    if V is None or np.size(V) == 0:
        V = np.zeros((newcols.shape[0], 0))
    V = np.asarray(V, dtype=float)
    if V.shape[0] != newcols.shape[0]:
        raise InvalidInputError(
            f"row mismatch: basis has {V.shape[0]} rows, new columns {newcols.shape[0]}"
        )
    cols = [V[:, j] for j in range(V.shape[1])]
    for j in range(newcols.shape[1]):
        w = newcols[:, j].copy()
        norm0 = np.linalg.norm(w)
        if norm0 == 0.0:
            continue
        for _ in range(2):
            for q in cols:
                w -= (q @ w) * q
        nrm = np.linalg.norm(w)
        if nrm < deflation_tol * norm0:
            log.debug("orth_extend: column %d deflated (rel. norm %.2e)", j, nrm / norm0)
            continue
        cols.append(w / nrm)
    if not cols:
        return np.zeros((newcols.shape[0], 0))
    return np.column_stack(cols)


class Preconditioner:
    """Incomplete LU factors wrapped as an approximate inverse."""

    def __init__(self, ilu, shape):
        self._ilu = ilu
        self.shape = shape

    def solve(self, b):
        return self._ilu.solve(b)

    def as_operator(self):
        return spla.LinearOperator(self.shape, matvec=self._ilu.solve)


def ilu_factor(A, drop_tol=DEFAULT_DROP_TOL, fill_factor=10.0):
    """Threshold ILU of a square sparse matrix (SuperLU ``spilu``)."""
    A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError("ILU needs a square matrix")
    try:
        ilu = spla.spilu(A, drop_tol=drop_tol, fill_factor=fill_factor)
    except RuntimeError as exc:
        raise PivotBreakdownError(f"ILU breakdown: {exc}") from exc
    return Preconditioner(ilu, A.shape)


def gmres_solve(A, b, tol=1e-6, restart=DEFAULT_RESTART, maxiter=None, precond=None, x0=None):
    """Restarted GMRES with optional ILU preconditioner.

    Convergence is judged on the recomputed true residual
    ``||b - A x|| <= tol ||b||``; non-convergence is reported, not raised.
    """
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.size:
        raise InvalidInputError("gmres_solve: A must be square and match b")
    if not np.all(np.isfinite(b)):
        raise NumericFailureError("non-finite right-hand side")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return IterativeSolveReport(np.zeros_like(b), 0.0, 0, True)
    if maxiter is None:
        maxiter = 10 * restart
    counter = [0]

    def _count(_):
        counter[0] += 1

    M = precond.as_operator() if precond is not None else None
    x, _info = spla.gmres(
        A, b, x0=x0, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter,
        M=M, callback=_count, callback_type="pr_norm",
    )
    if not np.all(np.isfinite(x)):
        raise NumericFailureError("GMRES produced non-finite iterate")
    res = float(np.linalg.norm(b - A @ x))
    return IterativeSolveReport(x, res, counter[0], res <= tol * bnorm)


def smallest_singular_value(M):
    """sigma_min of a square matrix, computed densely.

    Intended for desk-scale matrices (N up to a few thousand).
    """
    if M.shape[0] != M.shape[1]:
        raise InvalidInputError("smallest_singular_value needs a square matrix")
    if M.shape[0] > DENSE_SIGMA_LIMIT:
        log.warning("densifying a %d x %d matrix for sigma_min", *M.shape)
    D = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    if not np.all(np.isfinite(D)):
        raise NumericFailureError("non-finite entries in sigma_min input")
    s = la.svdvals(D, check_finite=False)
    return float(s[-1])
