"""POD bases, Galerkin reduced models and their time stepping.

The reduced model keeps the affine structure of the full operators, so a
reduced ``E_r(mu)`` is a small weighted sum of pre-projected terms. With an
interpolation basis attached, the nonlinear term is evaluated only on the
stencil closure of the interpolation indices.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from .errors import InvalidInputError, InterpolationDegeneracyError, RomInstabilityError
from .linalg_core import truncated_svd

log = logging.getLogger(__name__)

__all__ = [
    "ReducedBasis",
    "ReducedModel",
    "RomTrajectory",
    "BatchRomResult",
    "pod",
    "project_rom",
    "simulate_rom",
    "simulate_rom_batch",
    "adss_filter",
]

DIVERGENCE_LIMIT = 1e12
DEFAULT_ADSS_TOL = 1e-5


@dataclass
class ReducedBasis:
    V: np.ndarray
    provenance: list = field(default_factory=list)  # (mu, mode index) per column

    @property
    def size(self):
        return self.V.shape[1]


def pod(X, count=None, energy=None):
    """Leading left singular vectors of the snapshot matrix ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.size == 0:
        raise InvalidInputError("POD needs a non-empty snapshot matrix")
    if not np.any(X):
        return ReducedBasis(np.zeros((X.shape[0], 0)), [])
    if count is not None:
        count = min(int(count), min(X.shape))
    svd = truncated_svd(X, count=count, energy=energy)
    return ReducedBasis(svd.left_vectors, [(None, i) for i in range(svd.rank)])


class ReducedModel:
    """Galerkin projection (``W = V``) of a :class:`SemiImplicitFom`.

    Parameters
    ----------
    fom : SemiImplicitFom
    V : ndarray or ReducedBasis
        Orthonormal reduced basis, ``N x l_RB``.
    interp : InterpBasis, optional
        Interpolation basis for the nonlinear term. Without it the ROM
        evaluates ``V^T f(V x_r)`` in full dimension.
    """

    def __init__(self, fom, V, interp=None):
        if isinstance(V, ReducedBasis):
            V = V.V
        V = np.asarray(V, dtype=float)
        if V.shape[0] != fom.N:
            raise InvalidInputError(f"basis has {V.shape[0]} rows, model has N={fom.N}")
        self.fom = fom
        self.V = V
        self.E_terms = [V.T @ (T @ V) for T in fom.E.terms]
        self.A_terms = [V.T @ (T @ V) for T in fom.A.terms]
        self.B_r = V.T @ fom.B.toarray()
        self.C_r = fom.C @ V
        self.interp = interp
        if interp is not None:
            if interp.U.shape[0] != fom.N:
                raise InvalidInputError("interpolation basis does not match the model")
            try:
                # V^T U (P^T U)^{-1}
                self.coupling = (V.T @ interp.U) @ interp.coefficients(np.eye(interp.size))
            except np.linalg.LinAlgError as exc:
                raise InterpolationDegeneracyError(str(exc)) from exc
            self.restricted = fom.restrict(interp.indices)
            self.V_rows = V[self.restricted.rows]
        else:
            self.coupling = None
            self.restricted = None
            self.V_rows = None

    @property
    def dims(self):
        return (self.fom.N, self.V.shape[1], 0 if self.interp is None else self.interp.size)

    def E_r(self, mu):
        c = self.fom.E.coefficients(mu)
        return sum(ci * T for ci, T in zip(c, self.E_terms))

    def A_r(self, mu):
        c = self.fom.A.coefficients(mu)
        return sum(ci * T for ci, T in zip(c, self.A_terms))

    def reduced_nonlinear(self, xr, mu):
        """Reduced nonlinear term for reduced state(s) ``xr`` (``l`` or ``l x m``)."""
        if self.interp is None:
            return self.V.T @ self.fom.nonlinear(self.V @ xr, mu)
        if self.interp.size == 0:
            return np.zeros_like(xr)
        return self.coupling @ self.restricted(self.V_rows @ xr, mu)


def project_rom(fom, V, interp=None):
    return ReducedModel(fom, V, interp)


@dataclass
class RomTrajectory:
    mu: np.ndarray
    reduced_states: np.ndarray  # l x (n_steps + 1), column k is x_r^k
    outputs: np.ndarray  # N_O x n_steps, column k-1 is y_r^k
    snapshot_steps: np.ndarray
    V: np.ndarray
    unstable_at: int = None

    @property
    def stable(self):
        return self.unstable_at is None

    def lifted(self, steps):
        return self.V @ self.reduced_states[:, steps]

    @property
    def snapshot_outputs(self):
        return self.outputs[:, self.snapshot_steps - 1]

    def raise_if_unstable(self):
        if not self.stable:
            raise RomInstabilityError(f"ROM diverged at mu={self.mu}", step=self.unstable_at)


def simulate_rom(rom, mu):
    """Step the reduced model at ``mu``.

    A non-finite or exploding state stops the run; the trajectory is returned
    with ``unstable_at`` set to the offending step.
    """
    fom = rom.fom
    mu = fom.domain.check(mu)
    n_steps = fom.steps(mu)
    ell = rom.V.shape[1]
    Er = rom.E_r(mu)
    Ar = rom.A_r(mu)
    G = np.linalg.solve(Er, Ar) if ell else Ar
    Einv = np.linalg.inv(Er) if ell else Er
    H = Einv @ rom.coupling if rom.coupling is not None else None
    Bt = Einv @ rom.B_r
    dt = fom.dt
    X = np.zeros((ell, n_steps + 1))
    X[:, 0] = rom.V.T @ fom.x0
    Y = np.zeros((fom.n_outputs, n_steps))
    unstable = None
    with np.errstate(all="ignore"):
        for k in range(n_steps):
            x = X[:, k]
            if H is not None:
                fr = rom.restricted(rom.V_rows @ x, mu) if rom.interp.size else np.zeros(0)
                nxt = G @ x + dt * (H @ fr)
            else:
                nxt = G @ x + dt * (Einv @ (rom.V.T @ fom.nonlinear(rom.V @ x, mu)))
            nxt += dt * (Bt @ fom.input_signal(k, mu))
            if not np.all(np.isfinite(nxt)) or np.abs(nxt).max(initial=0.0) > DIVERGENCE_LIMIT:
                unstable = k + 1
                log.debug("ROM unstable at step %d for mu=%s", k + 1, mu)
                break
            X[:, k + 1] = nxt
            Y[:, k] = rom.C_r @ nxt
    if unstable is not None:
        X[:, unstable:] = np.nan
        Y[:, unstable - 1:] = np.nan
    return RomTrajectory(mu, X, Y, fom.snapshot_steps(mu), rom.V, unstable)


@dataclass
class BatchRomResult:
    """Reduced states at the snapshot instants and at the step before each."""

    mus: np.ndarray
    snap_states: list  # per mu: l x K
    prev_states: list  # per mu: l x K
    outputs: list  # per mu: N_O x K (at the snapshot instants)
    snapshot_steps: list
    unstable: np.ndarray  # bool per mu


def simulate_rom_batch(rom, mus):
    """Simulate the ROM for many parameters at once.

    Parameters sharing a step count are advanced together with batched
    small matrix products; only the states needed for residual evaluation
    are kept.
    """
    fom = rom.fom
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    if fom.domain.dim == 0:
        mus = np.zeros((mus.shape[0], 0))
    m = mus.shape[0]
    ell = rom.V.shape[1]
    res = BatchRomResult(mus, [None] * m, [None] * m, [None] * m, [None] * m,
                         np.zeros(m, dtype=bool))
    steps = np.array([fom.steps(mu) for mu in mus])
    dt = fom.dt
    for n_steps in np.unique(steps):
        sel = np.flatnonzero(steps == n_steps)
        mm = mus[sel]
        Er = np.stack([rom.E_r(mu) for mu in mm])
        Ar = np.stack([rom.A_r(mu) for mu in mm])
        if ell:
            G = np.linalg.solve(Er, Ar)
            Einv = np.linalg.inv(Er)
        else:
            G = Ar
            Einv = Er
        H = Einv @ rom.coupling if rom.coupling is not None else None
        Bt = Einv @ rom.B_r
        snap = fom.snapshot_steps(mm[0])
        want_snap = np.zeros(n_steps + 1, dtype=int) - 1
        want_snap[snap] = np.arange(snap.size)
        want_prev = np.zeros(n_steps + 1, dtype=int) - 1
        want_prev[snap - 1] = np.arange(snap.size)
        nb = sel.size
        Xs = np.zeros((nb, ell, snap.size))
        Xp = np.zeros((nb, ell, snap.size))
        x = np.tile(rom.V.T @ fom.x0, (nb, 1))  # nb x l
        bad = np.zeros(nb, dtype=bool)
        with np.errstate(all="ignore"):
            for k in range(n_steps):
                if want_prev[k] >= 0:
                    Xp[:, :, want_prev[k]] = x
                u = fom.input_signal(k, mm)  # N_I x nb
                if H is not None:
                    if rom.interp.size:
                        fr = rom.restricted(rom.V_rows @ x.T, mm)  # l_EI x nb
                        nl = np.einsum("bij,jb->bi", H, fr)
                    else:
                        nl = 0.0
                else:
                    fr = rom.V.T @ fom.nonlinear(rom.V @ x.T, mm)
                    nl = np.einsum("bij,jb->bi", Einv, fr)
                x = np.einsum("bij,bj->bi", G, x) + dt * nl + dt * np.einsum("bij,jb->bi", Bt, u)
                blown = ~np.all(np.isfinite(x), axis=1) | (np.abs(x).max(axis=1, initial=0.0) > DIVERGENCE_LIMIT)
                if blown.any():
                    bad |= blown
                    x[blown] = 0.0
                if want_snap[k + 1] >= 0:
                    Xs[:, :, want_snap[k + 1]] = x
        for j, i in enumerate(sel):
            res.snap_states[i] = Xs[j]
            res.prev_states[i] = Xp[j]
            res.outputs[i] = rom.C_r @ Xs[j]
            res.snapshot_steps[i] = snap
            res.unstable[i] = bad[j]
    return res


def adss_filter(X, angle_tol=DEFAULT_ADSS_TOL):
    """Sequential angle-based thinning of snapshot columns.

    Column ``j`` is kept iff the sine of its angle to the last kept column is
    at least ``angle_tol``. Zero columns are skipped.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] == 0:
        raise InvalidInputError("AdSS needs a non-empty snapshot matrix")
    if not 0.0 < angle_tol < 1.0:
        raise InvalidInputError("angle tolerance must lie in (0, 1)")
    # scale by the largest entry first so tiny columns do not underflow
    scale = np.abs(X).max(axis=0)
    kept = []
    last = None
    for j in range(X.shape[1]):
        if scale[j] == 0.0:
            log.debug("AdSS: zero column %d skipped", j)
            continue
        x = X[:, j] / scale[j]
        x /= np.linalg.norm(x)
        if last is None:
            kept.append(j)
            last = x
            continue
        r = x - (last @ x) * last
        if np.linalg.norm(r) >= angle_tol:
            kept.append(j)
            last = x
    kept = np.array(kept, dtype=int)
    return kept, X[:, kept]
