"""Primal-dual output error indicators.

For a reduced trajectory ``x_hat`` the primal residual at a snapshot step is

    r_pr = A x_hat^k + dt f(x_hat^k) + dt B u^k - E x_hat^{k+1}

and splits into an interpolated part ``r_pr,I`` (``f`` replaced by its
interpolant) plus ``dt (f - I[f])``. With a dual approximation ``x_hat_du`` of
``E^T x_du = -C^T`` and the time-averaged ratio ``rho_bar`` the indicator
coefficients are

    original:  Phi = rho (||E^-1|| ||r_du|| + ||x_hat_du||)
    modified:  Psi = rho ||E^-1|| ||r_du|| + |1 - rho| ||x_hat_du||

and the per-step indicator is ``coef * (||r_pr,I|| + dt ||Delta_I||)``.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateRhoError, InvalidInputError, PivotBreakdownError
from .linalg_core import (
    DEFAULT_DROP_TOL,
    gmres_solve,
    ilu_factor,
    orth_extend,
)

log = logging.getLogger(__name__)

__all__ = [
    "PrimalResiduals",
    "primal_residuals",
    "rho_bar",
    "DualSolution",
    "dual_solve_nonparametric",
    "dual_from_primal_basis",
    "DualReducedBasis",
    "update_v_du",
    "ErrorReport",
    "indicator_coefficient",
    "output_indicator",
    "true_mean_output_error",
]

RHO_SKIP = 1e-14


@dataclass
class PrimalResiduals:
    """Residual blocks at the snapshot instants (columns)."""

    r_interp: np.ndarray  # r_pr,I, N x K
    r_full: np.ndarray  # r_pr, N x K
    f_prev: np.ndarray  # f(x_hat^k), N x K

    @property
    def interp_norms(self):
        return np.linalg.norm(self.r_interp, axis=0)

    @property
    def full_norms(self):
        return np.linalg.norm(self.r_full, axis=0)


def primal_residuals(fom, mu, x_snap, x_prev, interp=None, inputs=None, steps=None):
    """Primal residuals for lifted states ``x_snap`` (step ``k+1``) and
    ``x_prev`` (step ``k``), both ``N x K``.

    ``inputs`` holds ``u^k`` column-wise; if omitted it is generated from
    ``steps`` (the snapshot step indices).
    """
    x_snap = np.atleast_2d(x_snap)
    x_prev = np.atleast_2d(x_prev)
    if x_prev.shape != x_snap.shape:
        raise InvalidInputError("every snapshot state needs its predecessor")
    if x_snap.shape[0] != fom.N:
        raise InvalidInputError("lifted states must have N rows")
    if inputs is None:
        if steps is None:
            raise InvalidInputError("give inputs or snapshot steps")
        inputs = np.column_stack([fom.input_signal(k - 1, mu) for k in steps])
    dt = fom.dt
    E = fom.E(mu)
    A = fom.A(mu)
    F = fom.nonlinear(x_prev, mu)
    base = A @ x_prev + dt * (fom.B @ inputs) - E @ x_snap
    r_full = base + dt * F
    if interp is None:
        r_interp = r_full
    else:
        r_interp = base + dt * interp.interpolate(F)
    return PrimalResiduals(r_interp, r_full, F)


def rho_bar(fom, mu, x_true, x_hat, r_full_norms, skip=RHO_SKIP):
    """Time average of ``||E (x - x_hat)|| / ||r_pr||`` over the snapshot
    instants; instants with ``||r_pr|| < skip`` are left out."""
    E = fom.E(mu)
    num = np.linalg.norm(E @ (np.atleast_2d(x_true) - np.atleast_2d(x_hat)), axis=0)
    den = np.asarray(r_full_norms, dtype=float)
    ok = den >= skip
    if not ok.any():
        raise DegenerateRhoError("all primal residuals vanish; rho is 0/0")
    if not ok.all():
        log.info("rho_bar: %d of %d instants skipped", int((~ok).sum()), ok.size)
    return float(np.mean(num[ok] / den[ok]))


# ---------------------------------------------------------------------------
# dual system


@dataclass
class DualSolution:
    """Approximate dual solution(s), one column per output row."""

    mode: str
    x_du: np.ndarray  # N x N_O
    r_du_norm: np.ndarray  # N_O
    V_du: np.ndarray = None
    converged: bool = True

    @property
    def x_du_norm(self):
        return np.linalg.norm(self.x_du, axis=0)


def _dual_residual_norms(E, C, X):
    return np.linalg.norm(-C.T - E.T @ X, axis=0)


def dual_solve_nonparametric(fom, tol=1e-6, drop_tol=DEFAULT_DROP_TOL, restart=50, mu=None):
    """GMRES + ILU solution of ``E^T x_du = -C_i^T`` for each output row."""
    if fom.is_E_parametric and mu is None:
        raise InvalidInputError("E depends on mu; use the dual reduced basis instead")
    mu = np.zeros(fom.domain.dim) if mu is None else mu
    Et = sp.csr_matrix(fom.E(mu).T)
    try:
        M = ilu_factor(Et, drop_tol=drop_tol)
    except PivotBreakdownError:
        log.warning("ILU breakdown, falling back to unpreconditioned GMRES")
        M = None
    cols, conv = [], True
    for i in range(fom.n_outputs):
        rep = gmres_solve(Et, -fom.C[i], tol=tol, restart=restart, precond=M)
        conv &= rep.converged
        cols.append(rep.solution)
    X = np.column_stack(cols)
    return DualSolution("nonparametric_krylov", X, _dual_residual_norms(fom.E(mu), fom.C, X),
                        converged=conv)


def dual_from_primal_basis(fom, V, mu):
    """Dual reduced with the primal basis (the older strategy)."""
    E = fom.E(mu)
    Er = V.T @ (E @ V)
    xr = np.linalg.solve(Er.T, -(V.T @ fom.C.T))
    X = V @ xr
    return DualSolution("primal_rb", X, _dual_residual_norms(E, fom.C, X), V_du=V)


class DualReducedBasis:
    """Separate reduced basis for a parametric dual system.

    Attributes
    ----------
    V_du : ndarray
        Orthonormal dual basis (``N x n``), grown by :func:`update_v_du`.
    mu_star : ndarray
        Parameter at which the next full dual solve happens.
    """

    def __init__(self, fom, mu_star):
        self.fom = fom
        self.V_du = np.zeros((fom.N, 0))
        self.mu_star = np.atleast_1d(np.asarray(mu_star, dtype=float))
        self.history = []
        self._refresh()

    def _refresh(self):
        V = self.V_du
        self._E_terms = [V.T @ (T @ V) for T in self.fom.E.terms]
        self._rhs = -(V.T @ self.fom.C.T)

    def solve(self, mu):
        """Galerkin dual solution at ``mu``."""
        fom = self.fom
        n = self.V_du.shape[1]
        if n == 0:
            X = np.zeros((fom.N, fom.n_outputs))
        else:
            c = fom.E.coefficients(mu)
            Er = sum(ci * T for ci, T in zip(c, self._E_terms))
            X = self.V_du @ np.linalg.solve(Er.T, self._rhs)
        return DualSolution("parametric_rb", X, self.residual_norms(mu, X), V_du=self.V_du)

    def residual_norms(self, mu, X):
        return _dual_residual_norms(self.fom.E(mu), self.fom.C, X)

    def indicator(self, mu):
        """``max_i ||-C_i^T - E(mu)^T V_du x_du,r||``."""
        return float(self.solve(mu).r_du_norm.max())


def update_v_du(dual, training_points, tol):
    """One enrichment step of the dual reduced basis.

    If the dual residual at the current dual parameter exceeds ``tol`` the
    full dual system is solved there, the basis is extended and the next
    dual parameter becomes the maximizer of the dual residual over the
    training points. Returns ``True`` if the basis grew.
    """
    fom = dual.fom
    if dual.indicator(dual.mu_star) <= tol:
        return False
    E = sp.csc_matrix(fom.E(dual.mu_star))
    X = spla.spsolve(E.T.tocsc(), -fom.C.T)
    X = np.asarray(X).reshape(fom.N, -1)
    n_old = dual.V_du.shape[1]
    dual.V_du = orth_extend(dual.V_du, X)
    if dual.V_du.shape[1] == n_old:
        log.info("dual basis extension deflated at mu=%s", dual.mu_star)
        return False
    dual._refresh()
    vals = np.array([dual.indicator(mu) for mu in training_points])
    j = int(np.argmax(vals))
    dual.history.append((dual.mu_star.copy(), float(vals[j])))
    dual.mu_star = np.atleast_1d(training_points[j]).astype(float)
    return True


# ---------------------------------------------------------------------------
# indicators


def indicator_coefficient(mode, rho, inv_norm, r_du_norm, x_du_norm):
    """``Phi`` (original) or ``Psi`` (modified); maximum over output rows."""
    r_du_norm = np.atleast_1d(r_du_norm)
    x_du_norm = np.atleast_1d(x_du_norm)
    if mode == "original":
        c = rho * (inv_norm * r_du_norm + x_du_norm)
    elif mode == "modified":
        c = rho * inv_norm * r_du_norm + abs(1.0 - rho) * x_du_norm
    else:
        raise InvalidInputError(f"unknown indicator mode {mode!r}")
    return float(np.max(c))


@dataclass
class ErrorReport:
    mode: str
    coefficient: float
    rho: float
    infsup: float
    delta_rb_steps: np.ndarray
    delta_i_steps: np.ndarray
    corrected_outputs: np.ndarray = None
    true_error: float = None
    extras: dict = field(default_factory=dict)

    @property
    def delta_rb(self):
        return float(np.mean(self.delta_rb_steps))

    @property
    def delta_i(self):
        return float(np.mean(self.delta_i_steps))

    @property
    def delta(self):
        return self.delta_rb + self.delta_i

    @property
    def effectivity(self):
        if self.true_error is None or self.true_error <= 0.0:
            return None
        return self.delta / self.true_error


def output_indicator(mode, rho, infsup, dual, rpr_interp_norms, delta_i_norms,
                     outputs=None, r_full=None):
    """Assemble the per-step and mean indicator.

    ``infsup`` is ``sigma_min(E(mu))``; ``delta_i_norms`` must already carry
    the ``dt`` factor. In modified mode with ``outputs`` (``N_O x K``) and
    ``r_full`` (``N x K``) given, the corrected outputs are returned as well.
    """
    if infsup is None:
        raise InvalidInputError("sigma_min of E is required")
    if infsup <= 0:
        raise InvalidInputError("sigma_min must be positive")
    coef = indicator_coefficient(mode, rho, 1.0 / infsup, dual.r_du_norm, dual.x_du_norm)
    rep = ErrorReport(
        mode=mode,
        coefficient=coef,
        rho=rho,
        infsup=infsup,
        delta_rb_steps=coef * np.asarray(rpr_interp_norms, dtype=float),
        delta_i_steps=coef * np.asarray(delta_i_norms, dtype=float),
    )
    if outputs is not None and r_full is not None and mode == "modified":
        rep.corrected_outputs = corrected_outputs(outputs, dual, r_full)
    elif outputs is not None:
        rep.corrected_outputs = np.atleast_2d(outputs)
    return rep


def corrected_outputs(outputs, dual, r_full):
    """``y_r - x_hat_du^T r_pr`` per output row."""
    return np.atleast_2d(outputs) - dual.x_du.T @ np.atleast_2d(r_full)


def true_mean_output_error(y_fom, y_rom):
    """Mean over the snapshot instants of the max-norm output error."""
    diff = np.abs(np.atleast_2d(y_fom) - np.atleast_2d(y_rom))
    return float(np.mean(np.max(diff, axis=0)))
