"""Full-order models in semi-implicit discrete form and their time stepper.

Every model is written as::

    E(mu) x^{k+1} = A(mu) x^k + dt f(x^k, mu) + dt B u^k(mu),   y^{k+1} = C x^{k+1}

with ``E`` and ``A`` affine in the parameter, ``E(mu) = sum_q theta_q(mu) E_q``.
Three benchmarks are assembled here:

* viscous Burgers' equation (viscosity as parameter),
* a batch chromatography column (feed flow rate and injection time),
* a non-parametric 1-D reaction-diffusion problem with cubic reaction.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidInputError, NumericFailureError

log = logging.getLogger(__name__)

__all__ = [
    "ParameterDomain",
    "TrainingSet",
    "AffineOperator",
    "SemiImplicitFom",
    "Trajectory",
    "ChromatographyCoefficients",
    "assemble_burgers",
    "assemble_chromatography",
    "assemble_synthetic_rd",
    "simulate_fom",
]


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class ParameterDomain:
    """Axis-aligned box ``[lo_i, hi_i]``; ``d = 0`` for non-parametric models."""

    lo: tuple
    hi: tuple

    @property
    def dim(self):
        return len(self.lo)

    def contains(self, mu, rtol=1e-12):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if mu.size != self.dim:
            return False
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        slack = rtol * np.maximum(np.abs(lo), np.abs(hi))
        return bool(np.all(mu >= lo - slack) and np.all(mu <= hi + slack))

    def check(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if not self.contains(mu):
            raise InvalidInputError(f"parameter {mu} outside domain [{self.lo}, {self.hi}]")
        return mu


@dataclass(frozen=True)
class TrainingSet:
    """Ordered parameter samples; ``points`` has shape ``(n, d)``."""

    points: np.ndarray
    domain: ParameterDomain
    sampling: str = "uniform"
    counts: tuple = ()

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0:
            raise InvalidInputError("training set must be non-empty")
        if pts.shape[1] != self.domain.dim:
            raise InvalidInputError("training points do not match the domain dimension")
        for p in pts:
            self.domain.check(p)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def __getitem__(self, i):
        return self.points[i]

    @classmethod
    def grid(cls, domain, counts, log_axes=()):
        axes = []
        for i, (lo, hi, n) in enumerate(zip(domain.lo, domain.hi, counts)):
            if i in log_axes:
                axes.append(np.logspace(math.log10(lo), math.log10(hi), n))
            else:
                axes.append(np.linspace(lo, hi, n))
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        # endpoints of logspace can drift by one ulp
        pts = np.clip(pts, np.asarray(domain.lo), np.asarray(domain.hi))
        sampling = "log-uniform" if log_axes else "uniform"
        return cls(pts, domain, sampling, tuple(counts))

    @classmethod
    def single(cls, domain, mu=None):
        mu = np.zeros(0) if mu is None else np.atleast_1d(mu)
        return cls(mu[None, :], domain, "uniform", (1,))


# ---------------------------------------------------------------------------
# model container


@dataclass(frozen=True)
class AffineOperator:
    """``M(mu) = sum_q theta(mu)[q] * terms[q]``."""

    terms: tuple
    theta: object  # callable mu -> sequence of len(terms)

    def __call__(self, mu):
        coef = self.theta(mu)
        out = coef[0] * self.terms[0]
        for c, T in zip(coef[1:], self.terms[1:]):
            out = out + c * T
        return sp.csr_matrix(out)

    def coefficients(self, mu):
        return np.asarray(self.theta(mu), dtype=float)

    @property
    def is_parametric(self):
        return len(self.terms) > 1


def _constant(M):
    return AffineOperator((sp.csr_matrix(M),), lambda mu: (1.0,))


class RestrictedEvaluator:
    """Evaluates ``f`` at selected rows from the state on their stencil closure.

    ``rows`` is the (sorted) closure; ``__call__`` takes the state restricted
    to ``rows`` (shape ``(len(rows),)`` or ``(len(rows), m)``) and returns
    ``f`` at ``indices`` in the requested order.
    """

    def __init__(self, indices, rows, fn):
        self.indices = np.asarray(indices, dtype=int)
        self.rows = np.asarray(rows, dtype=int)
        self._fn = fn

    def __call__(self, x_rows, mu):
        return self._fn(x_rows, mu)


@dataclass
class SemiImplicitFom:
    """Semi-implicit full-order model; see module docstring for the form."""

    name: str
    N: int
    dt: float
    domain: ParameterDomain
    E: AffineOperator
    A: AffineOperator
    B: sp.csr_matrix
    C: np.ndarray
    nonlinear: object  # f(x, mu), x of shape (N,) or (N, m)
    restrict: object  # indices -> RestrictedEvaluator
    input_signal: object  # (k, mu) -> u^k of shape (N_I,) or (N_I, m)
    steps: object  # mu -> number of time steps
    snapshot_stride: int = 10
    x0: np.ndarray = None
    output_names: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.x0 is None:
            self.x0 = np.zeros(self.N)
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))

    @property
    def is_E_parametric(self):
        return self.E.is_parametric

    @property
    def n_outputs(self):
        return self.C.shape[0]

    def f_restricted(self, x, mu, indices):
        """``f(x, mu)[indices]`` evaluated through the stencil closure."""
        ev = self.restrict(indices)
        return ev(x[ev.rows], mu)

    def snapshot_steps(self, mu):
        n = self.steps(mu)
        return np.arange(self.snapshot_stride, n + 1, self.snapshot_stride)


@dataclass
class Trajectory:
    """FOM run: states and ``f`` at the snapshot instants, outputs at all steps."""

    mu: np.ndarray
    states: np.ndarray  # N x K
    nonlinear_snapshots: np.ndarray  # N x K
    outputs: np.ndarray  # N_O x n_steps, column k-1 is y^k
    snapshot_steps: np.ndarray  # step index of each stored state
    dt: float

    @property
    def times(self):
        return self.snapshot_steps * self.dt

    @property
    def snapshot_outputs(self):
        return self.outputs[:, self.snapshot_steps - 1]


def simulate_fom(fom, mu):
    """Run the full-order stepper at ``mu`` with a sparse LU of ``E(mu)``."""
    mu = fom.domain.check(mu)
    n_steps = fom.steps(mu)
    E = sp.csc_matrix(fom.E(mu))
    A = fom.A(mu)
    try:
        lu = spla.splu(E)
    except RuntimeError as exc:
        raise NumericFailureError(f"singular E(mu) at mu={mu}: {exc}", step=0) from exc
    snap = fom.snapshot_steps(mu)
    is_snap = np.zeros(n_steps + 1, dtype=bool)
    is_snap[snap] = True
    states = np.empty((fom.N, snap.size))
    outputs = np.empty((fom.n_outputs, n_steps))
    x = fom.x0.copy()
    dt = fom.dt
    j = 0
    for k in range(n_steps):
        rhs = A @ x + dt * fom.nonlinear(x, mu) + dt * (fom.B @ fom.input_signal(k, mu))
        x = lu.solve(rhs)
        if k == 0:
            rel = np.linalg.norm(E @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
            if rel > 1e-10:
                raise NumericFailureError(f"linear solve residual {rel:.2e}", step=1)
        if not np.all(np.isfinite(x)):
            raise NumericFailureError(f"non-finite FOM state at mu={mu}", step=k + 1)
        outputs[:, k] = fom.C @ x
        if is_snap[k + 1]:
            states[:, j] = x
            j += 1
    F = fom.nonlinear(states, mu) if states.shape[1] else np.zeros_like(states)
    return Trajectory(mu, states, F, outputs, snap, dt)


# ---------------------------------------------------------------------------
# generic helpers


def _closure(indices, offsets, N):
    idx = np.asarray(indices, dtype=int)
    cand = (idx[:, None] + np.asarray(offsets)[None, :]).ravel()
    return np.unique(cand[(cand >= 0) & (cand < N)])


def _stencil_evaluator(indices, D, N, pointwise):
    """Restricted evaluator for ``f(x) = pointwise(x, D x)``."""
    idx = np.asarray(indices, dtype=int)
    rows = _closure(idx, (-1, 0, 1), N)
    Dsub = sp.csr_matrix(D[idx][:, rows])
    pos = np.searchsorted(rows, idx)

    def fn(x_rows, mu):
        return pointwise(x_rows[pos], Dsub @ x_rows)

    return RestrictedEvaluator(idx, rows, fn)


# ---------------------------------------------------------------------------
# Burgers' equation


def assemble_burgers(N=500, dt=4e-4, T=2.0, mu_domain=(5e-4, 1.0), snapshot_stride=10):
    """Viscous Burgers' equation ``w_t + w w_x = mu w_xx + 1`` on ``[0, 1]``.

    Finite differences on the nodes ``x_i = i/N, i = 1..N`` with ``w(0) = 0``
    (Dirichlet inflow) and ``w_x(1) = 0`` via a mirrored ghost node. Central
    differences for both the diffusion and the convection term; diffusion
    implicit, convection explicit. Output is ``w(1, t)``.
    """
    if N < 3 or dt < 0:
        raise InvalidInputError("Burgers needs N >= 3 and dt >= 0")
    h = 1.0 / N
    main = -2.0 * np.ones(N)
    upper = np.ones(N - 1)
    lower = np.ones(N - 1)
    lower[-1] = 2.0  # ghost w_{N+1} = w_{N-1}
    L = sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / h**2
    dup = np.ones(N - 1)
    dlo = -np.ones(N - 1)
    dlo[-1] = 0.0  # mirrored ghost cancels the central difference at x = 1
    D = sp.diags([dlo, dup], [-1, 1], format="csr") / (2.0 * h)
    I = sp.identity(N, format="csr")

    def pointwise(w, dw):
        return -w * dw

    def nonlinear(x, mu):
        return pointwise(x, D @ x)

    E = AffineOperator((I, -dt * L), lambda mu: (1.0, float(np.ravel(mu)[0])))
    n_steps = int(round(T / dt)) if dt > 0 else 0
    return SemiImplicitFom(
        name="burgers",
        N=N,
        dt=dt,
        domain=ParameterDomain((mu_domain[0],), (mu_domain[1],)),
        E=E,
        A=_constant(I),
        B=sp.csr_matrix(np.ones((N, 1))),
        C=np.eye(1, N, N - 1),
        nonlinear=nonlinear,
        restrict=lambda idx: _stencil_evaluator(idx, D, N, pointwise),
        input_signal=_unit_input,
        steps=lambda mu: n_steps,
        snapshot_stride=snapshot_stride,
        output_names=("w(1,t)",),
        metadata={"T": T, "L": L, "D": D},
    )


def _unit_input(k, mu):
    mu = np.asarray(mu)
    if mu.ndim == 2:
        return np.ones((1, mu.shape[0]))
    return np.ones(1)


# ---------------------------------------------------------------------------
# synthetic reaction-diffusion


def assemble_synthetic_rd(N=200, dt=1e-3, T=1.0, snapshot_stride=1,
                          source_amplitude=200.0, source_center=0.3, source_width=0.05):
    """Non-parametric ``x_t = x_ss + x - x^3 + b(s)`` on ``(0, 1)``.

    Homogeneous Dirichlet boundaries, ``N`` interior nodes, diffusion
    coefficient 1 (implicit), cubic reaction explicit. The source is constant
    in time with Gaussian profile
    ``b(s) = source_amplitude * exp(-((s - source_center) / source_width)**2)``.
    Output is the value at the midpoint node ``N // 2``.
    """
    if N < 3:
        raise InvalidInputError("reaction-diffusion needs N >= 3")
    h = 1.0 / (N + 1)
    s = h * np.arange(1, N + 1)
    L = sp.diags([np.ones(N - 1), -2.0 * np.ones(N), np.ones(N - 1)], [-1, 0, 1],
                 format="csr") / h**2
    I = sp.identity(N, format="csr")
    b = source_amplitude * np.exp(-(((s - source_center) / source_width) ** 2))

    def nonlinear(x, mu):
        return x - x**3

    def restrict(idx):
        idx = np.asarray(idx, dtype=int)
        order = np.argsort(idx, kind="stable")
        rows = idx[order]
        inv = np.empty_like(order)
        inv[order] = np.arange(idx.size)
        return RestrictedEvaluator(idx, rows, lambda xr, mu: nonlinear(xr[inv], mu))

    n_steps = int(round(T / dt))
    return SemiImplicitFom(
        name="synthetic_rd",
        N=N,
        dt=dt,
        domain=ParameterDomain((), ()),
        E=_constant(I - dt * L),
        A=_constant(I),
        B=sp.csr_matrix(b[:, None]),
        C=np.eye(1, N, N // 2),
        nonlinear=nonlinear,
        restrict=restrict,
        input_signal=_unit_input,
        steps=lambda mu: n_steps,
        snapshot_stride=snapshot_stride,
        output_names=("x(1/2,t)",),
        metadata={"T": T, "source": b},
    )


# ---------------------------------------------------------------------------
# batch chromatography


@dataclass(frozen=True)
class ChromatographyCoefficients:
    """Bi-Langmuir column coefficients (components ``a``, ``b``).

    Defaults are a documented stand-in: porosity, Peclet number and the
    isotherm constants follow the usual bi-Langmuir test case; column length
    and cross-section only enter through the mass-transfer scaling
    ``kappa * length * porosity * area / Q``.
    """

    porosity: float = 0.4
    peclet: float = 2000.0
    length: float = 25.0
    area: float = 0.785
    kappa: tuple = (0.1, 0.1)
    henry1: tuple = (2.69, 3.73)
    henry2: tuple = (0.1, 0.3)
    K1: tuple = (0.0336, 0.0466)
    K2: tuple = (1.0, 3.0)
    feed: tuple = (2.9, 2.9)
    horizon_constant: float = 2.5  # T(Q) = horizon_constant / Q

    REQUIRED = ("porosity", "peclet", "length", "area", "kappa", "henry1", "henry2",
                "K1", "K2", "feed")

    @classmethod
    def from_dict(cls, d):
        missing = [k for k in cls.REQUIRED if k not in d]
        if missing:
            raise InvalidInputError(f"chromatography coefficients missing: {', '.join(missing)}")
        known = {k: d[k] for k in d if k in cls.__dataclass_fields__}
        for k, v in known.items():
            if isinstance(v, list):
                known[k] = tuple(v)
        return cls(**known)

    def isotherm(self, ca, cb):
        """Equilibrium loadings ``(q_a^eq, q_b^eq)``."""
        fa, fb = self.feed
        den1 = 1.0 + self.K1[0] * fa * ca + self.K1[1] * fb * cb
        den2 = 1.0 + self.K2[0] * fa * ca + self.K2[1] * fb * cb
        qa = self.henry1[0] * ca / den1 + self.henry2[0] * ca / den2
        qb = self.henry1[1] * cb / den1 + self.henry2[1] * cb / den2
        return qa, qb


def assemble_chromatography(N=1000, dt=0.01, coefficients=None, Q_domain=(0.0667, 0.1667),
                            tin_domain=(0.5, 2.0), snapshot_stride=1, theta=0.5):
    """Batch chromatography column with two components, ``mu = (Q, t_in)``.

    The state stacks ``[c_a, c_b, q_a, q_b]`` on ``N / 4`` finite-volume cells
    (dimensionless length 1). The convective flux is the local Lax-Friedrichs
    flux (unit velocity, so it reduces to upwinding), diffusion uses central
    differences with zero diffusive flux at both ends. The linear transport
    part is integrated by a theta scheme (Crank-Nicolson for ``theta = 0.5``),
    so ``E`` and ``A`` are constant tridiagonal blocks; the adsorption
    exchange is explicit and forms ``f``. Feed enters the first cell while
    ``t^k <= t_in``. Outputs are the outlet concentrations of both components.
    """
    coef = coefficients if coefficients is not None else ChromatographyCoefficients()
    if isinstance(coef, dict):
        coef = ChromatographyCoefficients.from_dict(coef)
    if N % 4 or N < 12:
        raise InvalidInputError("chromatography state dimension must be a multiple of 4 (>= 12)")
    n = N // 4
    dx = 1.0 / n
    eps = coef.porosity
    F = (1.0 - eps) / eps
    # upwind convection + central diffusion, Neumann diffusive boundaries
    d_diff = 1.0 / (coef.peclet * dx**2)
    main = -(1.0 / dx) - 2.0 * d_diff * np.ones(n)
    main[0] += d_diff
    main[-1] += d_diff
    lower = (1.0 / dx + d_diff) * np.ones(n - 1)
    upper = d_diff * np.ones(n - 1)
    K = sp.diags([lower, main, upper], [-1, 0, 1], format="csr")
    I = sp.identity(n, format="csr")
    Ec = I - theta * dt * K
    Ac = I + (1.0 - theta) * dt * K
    E = sp.block_diag([Ec, Ec, I, I], format="csr")
    A = sp.block_diag([Ac, Ac, I, I], format="csr")
    B = np.zeros((N, 1))
    B[0, 0] = 1.0 / dx
    B[n, 0] = 1.0 / dx
    C = np.zeros((2, N))
    C[0, n - 1] = 1.0
    C[1, 2 * n - 1] = 1.0

    mass_scale = coef.length * eps * coef.area
    ka = np.asarray(coef.kappa, dtype=float)

    def _rates(mu):
        mu = np.asarray(mu, dtype=float)
        Q = mu[..., 0]
        return ka[0] * mass_scale / Q, ka[1] * mass_scale / Q

    def _exchange(ca, cb, qa, qb, mu):
        ra, rb = _rates(mu)
        qa_eq, qb_eq = coef.isotherm(ca, cb)
        return ra * (qa_eq - qa), rb * (qb_eq - qb)

    def nonlinear(x, mu):
        ca, cb, qa, qb = x[:n], x[n:2 * n], x[2 * n:3 * n], x[3 * n:]
        ha, hb = _exchange(ca, cb, qa, qb, mu)
        return np.concatenate([-F * ha, -F * hb, ha, hb], axis=0)

    def restrict(idx):
        idx = np.asarray(idx, dtype=int)
        cells = np.unique(idx % n)
        rows = np.concatenate([cells + j * n for j in range(4)])
        m = cells.size
        comp = idx // n
        pos = np.searchsorted(cells, idx % n)

        def fn(xr, mu):
            ca, cb, qa, qb = xr[:m], xr[m:2 * m], xr[2 * m:3 * m], xr[3 * m:]
            ha, hb = _exchange(ca, cb, qa, qb, mu)
            full = np.stack([-F * ha, -F * hb, ha, hb], axis=0)
            return full[comp, pos]

        # rows sorted within each block and blocks are increasing
        return RestrictedEvaluator(idx, rows, fn)

    def input_signal(k, mu):
        mu = np.asarray(mu, dtype=float)
        on = (k * dt <= mu[..., 1] + 1e-12).astype(float)
        return on[None, :] if mu.ndim == 2 else np.array([on])

    def steps(mu):
        Q = float(np.ravel(mu)[0])
        return int(math.ceil(coef.horizon_constant / Q / dt))

    return SemiImplicitFom(
        name="chromatography",
        N=N,
        dt=dt,
        domain=ParameterDomain((Q_domain[0], tin_domain[0]), (Q_domain[1], tin_domain[1])),
        E=_constant(E),
        A=_constant(A),
        B=sp.csr_matrix(B),
        C=C,
        nonlinear=nonlinear,
        restrict=restrict,
        input_signal=input_signal,
        steps=steps,
        snapshot_stride=snapshot_stride,
        output_names=("c_a(outlet)", "c_b(outlet)"),
        metadata={"coefficients": coef, "cells": n, "theta": theta},
    )
