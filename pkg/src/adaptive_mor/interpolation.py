"""Empirical interpolation (EIM / DEIM) of nonlinear vectors.

An :class:`InterpBasis` stores the interpolation vectors ``U`` and the
selected rows ``indices``; the interpolant of ``f`` is
``U (P^T U)^{-1} P^T f`` where ``P^T f = f[indices]``.
"""

from dataclasses import dataclass, field
import logging
import warnings

import numpy as np
import scipy.linalg as la

from .errors import InterpolationDegeneracyError, InvalidInputError
from .linalg_core import _fix_signs, energy_rank, truncated_svd

log = logging.getLogger(__name__)

__all__ = [
    "InterpBasis",
    "NonlinearSnapshotPool",
    "eim_build",
    "deim_build",
    "apply_interp",
    "update_ei",
    "InterpErrorIndicator",
    "interp_error_indicator",
]

DEFAULT_FINE_MARGIN = 5


@dataclass(frozen=True)
class InterpBasis:
    U: np.ndarray
    indices: np.ndarray
    method: str
    _lu: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        object.__setattr__(self, "indices", idx)
        if self.U.shape[1] != idx.size:
            raise InvalidInputError("one interpolation index per basis vector required")
        if np.unique(idx).size != idx.size:
            raise InterpolationDegeneracyError("repeated interpolation index")
        if idx.size:
            PtU = self.U[idx]
            with warnings.catch_warnings():
                # singularity is diagnosed below
                warnings.simplefilter("ignore", la.LinAlgWarning)
                lu, piv = la.lu_factor(PtU, check_finite=False)
            if np.any(np.abs(np.diag(lu)) <= 1e-14 * max(np.abs(PtU).max(), 1e-300)):
                raise InterpolationDegeneracyError("P^T U_f is singular")
            object.__setattr__(self, "_lu", (lu, piv))

    @property
    def size(self):
        return self.indices.size

    @property
    def PtU(self):
        return self.U[self.indices]

    def coefficients(self, f_at_indices):
        """Solve ``(P^T U) c = f[indices]``; accepts one or many columns."""
        if self.size == 0:
            return np.zeros((0,) + np.shape(f_at_indices)[1:])
        if self.method == "EIM":
            return la.solve_triangular(self.PtU, f_at_indices, lower=True,
                                       unit_diagonal=True, check_finite=False)
        return la.lu_solve(self._lu, f_at_indices, check_finite=False)

    def truncate(self, ell):
        """First ``ell`` vectors and indices; valid because both builders nest."""
        ell = min(int(ell), self.size)
        return InterpBasis(self.U[:, :ell], self.indices[:ell], self.method)

    def interpolate(self, f):
        """Full lift ``U c`` of the interpolant of the full vector(s) ``f``."""
        f = np.asarray(f, dtype=float)
        return self.U @ self.coefficients(f[self.indices])


@dataclass
class NonlinearSnapshotPool:
    """Nonlinear snapshots gathered over the parameters selected so far.

    With ``compress_tol`` set, a truncated SVD of all columns is merged
    incrementally (singular values below ``compress_tol * s_max`` dropped),
    which is all DEIM needs. ``keep_raw=False`` then discards the columns
    themselves; EIM needs them.
    """

    F: np.ndarray = None
    ranges: list = field(default_factory=list)
    mus: list = field(default_factory=list)
    keep_raw: bool = True
    compress_tol: float = None
    U: np.ndarray = field(default=None, repr=False)
    s: np.ndarray = field(default=None, repr=False)
    _count: int = 0

    def add(self, mu, snapshots):
        snapshots = np.asarray(snapshots, dtype=float)
        if not np.all(np.isfinite(snapshots)):
            raise InvalidInputError("non-finite nonlinear snapshots")
        start = self._count
        self._count += snapshots.shape[1]
        if self.keep_raw:
            self.F = snapshots.copy() if self.F is None else np.hstack([self.F, snapshots])
        if self.compress_tol is not None:
            M = snapshots if self.U is None else np.hstack([self.U * self.s, snapshots])
            U, s, _ = la.svd(M, full_matrices=False, check_finite=False)
            keep = s > self.compress_tol * s[0] if s.size and s[0] > 0 else np.zeros(s.size, bool)
            U, _ = _fix_signs(U[:, keep], np.zeros((1, int(keep.sum()))))
            self.U, self.s = U, s[keep]
        self.ranges.append((start, self._count))
        self.mus.append(np.atleast_1d(mu).copy())
        return self

    @property
    def n_columns(self):
        return self._count


def _as_matrix(F):
    if isinstance(F, NonlinearSnapshotPool):
        F = F.F
    if F is None:
        raise InvalidInputError("empty snapshot pool")
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.size == 0:
        raise InvalidInputError("empty snapshot pool")
    return F


def eim_build(F, max_iter, eps=1e-10):
    """Greedy EIM on the snapshot columns.

    ``max_iter`` is the maximal number of basis vectors. Stops early when the
    worst interpolation residual norm drops below ``eps`` (or vanishes).
    """
    F = _as_matrix(F)
    if max_iter < 1:
        raise InvalidInputError("max_iter must be >= 1")
    N = F.shape[0]
    R = F.copy()
    vecs, idx = [], []
    norms = np.linalg.norm(R, axis=0)
    while len(vecs) < max_iter:
        j = int(np.argmax(norms))
        if norms[j] == 0.0 or (vecs and norms[j] < eps):
            break
        eta = R[:, j].copy()
        p = int(np.argmax(np.abs(eta)))
        zeta = eta / eta[p]
        vecs.append(zeta)
        idx.append(p)
        # Newton-form update keeps R = F - I_m[F]
        R -= np.outer(zeta, R[p])
        norms = np.linalg.norm(R, axis=0)
    if len(vecs) < max_iter:
        log.info("EIM stopped at %d of %d vectors", len(vecs), max_iter)
    U = np.column_stack(vecs) if vecs else np.zeros((N, 0))
    return InterpBasis(U, np.array(idx, dtype=int), "EIM")


def _deim_indices(U):
    idx = [int(np.argmax(np.abs(U[:, 0])))]
    for i in range(1, U.shape[1]):
        c = la.solve(U[idx, :i], U[idx, i], check_finite=False)
        r = U[:, i] - U[:, :i] @ c
        idx.append(int(np.argmax(np.abs(r))))
    return np.array(idx, dtype=int)


def deim_build(F, count=None, energy=None):
    """DEIM: POD of the snapshots plus greedy index selection.

    ``F`` may be a matrix or a pool; a compressed pool supplies its merged
    SVD directly.
    """
    if isinstance(F, NonlinearSnapshotPool) and F.U is not None:
        U_all, s = F.U, F.s
        if (count is None) == (energy is None):
            raise InvalidInputError("give exactly one of count or energy")
        r = min(int(count), s.size) if count is not None else energy_rank(s, energy)
        U = U_all[:, :r]
        if count is not None and r < count:
            log.info("DEIM: requested %d vectors, pool rank is %d", count, r)
    else:
        F = _as_matrix(F)
        if count is not None:
            count = min(int(count), min(F.shape))
        svd = truncated_svd(F, count=count, energy=energy)
        if count is not None and svd.rank < count:
            log.info("DEIM: requested %d vectors, pool rank is %d", count, svd.rank)
        U = svd.left_vectors
    if U.shape[1] == 0:
        return InterpBasis(np.zeros((U.shape[0], 0)), np.zeros(0, dtype=int), "DEIM")
    return InterpBasis(U, _deim_indices(U), "DEIM")


def apply_interp(basis, f_at_indices, lift=False):
    """Interpolation coefficients from ``f`` sampled at ``basis.indices``."""
    f_at_indices = np.asarray(f_at_indices, dtype=float)
    if f_at_indices.shape[0] != basis.size:
        raise InvalidInputError(f"expected {basis.size} samples, got {f_at_indices.shape[0]}")
    c = basis.coefficients(f_at_indices)
    if lift:
        return c, basis.U @ c
    return c


def update_ei(pool, ell, method="EIM", eps=1e-10):
    """Rebuild the interpolation basis of size ``ell`` from the whole pool."""
    if ell < 1:
        raise InvalidInputError("ell_EI must be >= 1")
    if method.upper() == "EIM":
        return eim_build(pool, max_iter=ell, eps=eps)
    if method.upper() == "DEIM":
        return deim_build(pool, count=ell)
    raise InvalidInputError(f"unknown interpolation method {method!r}")


class InterpErrorIndicator:
    """Higher-order estimate of the interpolation error.

    With the coarse basis of size ``l`` nested in the fine one of size
    ``l' > l``, the estimate is the Newton-form increment

        (I - Pi_l) U_e ((P_e^T (I - Pi_l) U_e)^{-1} P_e^T (I - Pi_l) f

    where ``U_e``, ``P_e`` hold the ``l' - l`` extra vectors and indices, i.e.
    ``I_{l'}[f] - I_l[f]``. Only ``f`` at the fine indices is needed; norms
    are evaluated through a precomputed Gram matrix.
    """

    def __init__(self, coarse, fine):
        if fine.size <= coarse.size:
            raise InvalidInputError("fine interpolation basis must be strictly larger")
        l = coarse.size
        if not np.array_equal(fine.indices[:l], coarse.indices) or not np.allclose(
            fine.U[:, :l], coarse.U, rtol=0, atol=1e-12
        ):
            raise InvalidInputError("fine basis must extend the coarse one")
        self.coarse, self.fine = coarse, fine
        Ue = fine.U[:, l:]
        self.extra_indices = fine.indices[l:]
        # (I - Pi_l) U_e
        self.W = Ue - coarse.U @ coarse.coefficients(Ue[coarse.indices]) if l else Ue.copy()
        self._PeW = self.W[self.extra_indices]
        self._lu = la.lu_factor(self._PeW, check_finite=False)
        self._gram = self.W.T @ self.W
        # P_e^T Pi_l f = _Pe_coarse @ f[coarse.indices]
        self._Pe_coarse = (
            coarse.U[self.extra_indices] @ la.inv(coarse.PtU) if l else np.zeros((Ue.shape[1], 0))
        )

    def coefficients(self, f_fine):
        """``f_fine`` = ``f`` at ``fine.indices`` (one column or many)."""
        l = self.coarse.size
        f_c, f_e = f_fine[:l], f_fine[l:]
        g_e = f_e - self._Pe_coarse @ f_c
        return la.lu_solve(self._lu, g_e, check_finite=False)

    def vector(self, f_fine):
        return self.W @ self.coefficients(f_fine)

    def norm(self, f_fine):
        c = self.coefficients(f_fine)
        if c.ndim == 1:
            return float(np.sqrt(max(c @ self._gram @ c, 0.0)))
        return np.sqrt(np.maximum(np.einsum("ik,ij,jk->k", c, self._gram, c), 0.0))


def interp_error_indicator(coarse, fine, f_samples):
    """Return ``(Delta_I, ||Delta_I||)`` from ``f`` sampled at ``fine.indices``."""
    ind = InterpErrorIndicator(coarse, fine)
    f_samples = np.asarray(f_samples, dtype=float)
    return ind.vector(f_samples), ind.norm(f_samples)
