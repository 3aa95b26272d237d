"""Greedy basis construction: standard POD-Greedy(-(D)EIM), the two-way
adaptive POD-(D)EIM loop for non-parametric models and the adaptive
POD-Greedy-(D)EIM loop with zone-of-acceptance termination.

All drivers share :class:`IndicatorSweep`, which simulates the current ROM
for many parameters at once and evaluates the original and modified output
error indicators for each of them.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
import logging
import math
import multiprocessing
import time

import numpy as np

from .error_estimation import (
    DualReducedBasis,
    dual_from_primal_basis,
    dual_solve_nonparametric,
    output_indicator,
    primal_residuals,
    rho_bar,
    true_mean_output_error,
    update_v_du,
)
from .errors import DegenerateRhoError, InvalidInputError
from .fom_models import TrainingSet, simulate_fom
from .infsup import build_surrogate
from .interpolation import (
    DEFAULT_FINE_MARGIN,
    InterpErrorIndicator,
    NonlinearSnapshotPool,
    deim_build,
    eim_build,
)
from .linalg_core import orth_extend, smallest_singular_value
from .reduction import ReducedBasis, ReducedModel, adss_filter, pod, simulate_rom_batch

log = logging.getLogger(__name__)

__all__ = [
    "GreedyConfig",
    "GreedyState",
    "BasisUpdate",
    "IterationRecord",
    "IndicatorSweep",
    "adapt_basis_update",
    "pod_greedy_standard",
    "pod_greedy_deim_standard",
    "adaptive_pod_deim_twoway",
    "adaptive_pod_greedy_deim",
    "validation_effectivities",
]

# log10 ratios are clipped to [-16, 10]: 0 maps to 1e-16, +inf (unstable ROM) to 1e10
RATIO_FLOOR = 1e-16
RATIO_CEIL = 1e10


@dataclass
class GreedyConfig:
    """Settings shared by all greedy drivers.

    ``tol_EI`` defaults to ``0.01 * tol`` and ``eps_star`` (lower edge of the
    zone of acceptance) to ``0.1 * tol``. ``dual`` is one of ``auto``,
    ``krylov`` (non-parametric E only), ``rb`` (separate dual basis) or
    ``primal_rb``.
    """

    tol: float = 1e-3
    tol_EI: float = None
    eps_star: float = None
    max_iter: int = 50
    eps_pod: float = 1e-10
    eps_ei: float = 1e-10
    method: str = "EIM"
    initial: tuple = (1, 1)
    seed: int = None
    dual: str = "auto"
    dual_tol: float = None
    indicator: str = "modified"
    fine_margin: int = DEFAULT_FINE_MARGIN
    max_shrink: int = 3
    infsup: str = "surrogate"
    infsup_max_centers: int = 15
    infsup_tol_change: float = 1e-2
    adss_tol: float = None
    stagnation_window: int = 3
    standard_ei_max: int = 1000
    gmres_tol: float = 1e-6
    ilu_drop_tol: float = 1e-3
    jobs: int = 1

    def __post_init__(self):
        if self.tol_EI is None:
            self.tol_EI = 0.01 * self.tol
        if self.eps_star is None:
            self.eps_star = 0.1 * self.tol
        self.initial = tuple(int(v) for v in self.initial)
        self.method = self.method.upper()
        if not self.tol > 0 or not self.tol_EI > 0:
            raise InvalidInputError("tolerances must be positive")
        if not 0 < self.eps_star < self.tol:
            raise InvalidInputError("zone of acceptance needs 0 < eps_star < tol")
        if self.tol_EI > self.tol:
            raise InvalidInputError("tol_EI must not exceed tol")
        if self.method not in ("EIM", "DEIM"):
            raise InvalidInputError(f"method must be EIM or DEIM, got {self.method!r}")
        if self.dual not in ("auto", "krylov", "rb", "primal_rb"):
            raise InvalidInputError(f"unknown dual strategy {self.dual!r}")
        if self.indicator not in ("original", "modified"):
            raise InvalidInputError(f"unknown indicator {self.indicator!r}")
        if self.infsup not in ("surrogate", "direct"):
            raise InvalidInputError(f"unknown inf-sup strategy {self.infsup!r}")
        if self.max_iter < 1 or self.max_shrink < 1 or self.fine_margin < 1:
            raise InvalidInputError("max_iter, max_shrink and fine_margin must be >= 1")
        if len(self.initial) != 2 or min(self.initial) < 1:
            raise InvalidInputError("initial (l_RB, l_EI) must be two positive counts")

    def in_zoa(self, delta):
        return self.eps_star <= delta <= self.tol

    def to_dict(self):
        d = asdict(self)
        d["initial"] = list(self.initial)
        return d


@dataclass(frozen=True)
class BasisUpdate:
    p: int
    d: int
    p0: int
    d0: int
    ell_rb_next: int  # per-iteration mode count, negative removes columns
    ell_ei_next: int  # cumulative target

    @property
    def rb_increment(self):
        return self.p0 + self.p

    @property
    def ei_increment(self):
        return self.d0 + self.d


@dataclass
class IterationRecord:
    iteration: int
    mu_enriched: np.ndarray
    ell_rb_inc: int
    ell_rb: int
    ell_ei: int
    delta_rb: float
    delta_i: float
    delta: float
    delta_max: float
    mu_next: np.ndarray
    true_error: float = float("nan")
    rho: float = float("nan")
    eff_original: float = float("nan")
    eff_modified: float = float("nan")
    fom_calls: int = 0
    wall_time: float = 0.0

    def as_row(self):
        return {
            "iteration": self.iteration,
            "mu_star": np.atleast_1d(self.mu_enriched),
            "ell_rb_inc": self.ell_rb_inc,
            "ell_rb": self.ell_rb,
            "ell_ei": self.ell_ei,
            "delta_rb": self.delta_rb,
            "delta_i": self.delta_i,
            "delta": self.delta,
            "delta_max": self.delta_max,
            "mu_next": np.atleast_1d(self.mu_next),
            "true_error": self.true_error,
            "rho": self.rho,
            "eff_original": self.eff_original,
            "eff_modified": self.eff_modified,
            "fom_calls": self.fom_calls,
            "wall_time": self.wall_time,
        }


ITERATION_COLUMNS = [
    "iteration", "mu_star", "ell_rb_inc", "ell_rb", "ell_ei", "delta_rb", "delta_i", "delta",
    "delta_max", "mu_next", "true_error", "rho", "eff_original", "eff_modified", "fom_calls",
    "wall_time",
]


@dataclass
class GreedyState:
    """Result and bookkeeping of one greedy run."""

    algorithm: str
    config: GreedyConfig
    V: ReducedBasis = None
    interp: object = None
    dual: object = None
    rho: float = 1.0
    selected: list = field(default_factory=list)
    records: list = field(default_factory=list)
    cause: str = None
    fom_calls: int = 0
    timings: dict = field(default_factory=dict)
    infsup: object = None
    trajectories: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def iterations(self):
        return len(self.records)

    @property
    def sizes(self):
        return (0 if self.V is None else self.V.size, 0 if self.interp is None else self.interp.size)

    @property
    def converged(self):
        return self.cause in ("zoa", "tol")


# ---------------------------------------------------------------------------
# update rule


def _floored_log(ratio):
    if not ratio > 0:
        ratio = RATIO_FLOOR
    ratio = min(max(ratio, RATIO_FLOOR), RATIO_CEIL)
    lg = math.log10(ratio)
    fl = math.floor(lg)
    trivial = int(np.sign(lg)) if fl == 0 else 0
    return fl, trivial


def adapt_basis_update(ell_rb, ell_ei, delta_rb, delta_i, tol_rb, tol_ei, rank_V, max_shrink=3):
    """Next (per-iteration RB count, total EI count) from the floored log10
    error ratios; negative counts are limited to ``-max_shrink``."""
    if not tol_rb > 0 or not tol_ei > 0:
        raise InvalidInputError("tolerances must be positive")
    p, p0 = _floored_log(delta_rb / tol_rb)
    d, d0 = _floored_log(delta_i / tol_ei)
    rb = max(p0 + p, -max_shrink)
    ei = ell_ei + max(d0 + d, -max_shrink)
    ei = max(ei, rank_V + max(rb, 0) + 1, 1)
    return BasisUpdate(p, d, p0, d0, rb, ei)


# ---------------------------------------------------------------------------
# indicator evaluation


@dataclass
class SweepResult:
    mus: np.ndarray
    delta_rb: dict  # mode -> array
    delta_i: dict
    unstable: np.ndarray
    outputs: list = None  # ROM outputs at snapshot instants
    corrected: list = None
    r_full_norms: list = None
    snap_states: list = None

    @classmethod
    def concat(cls, parts):
        modes = ("original", "modified")
        out = cls(np.vstack([p.mus for p in parts]),
                  {k: np.concatenate([p.delta_rb[k] for p in parts]) for k in modes},
                  {k: np.concatenate([p.delta_i[k] for p in parts]) for k in modes},
                  np.concatenate([p.unstable for p in parts]))
        if parts[0].outputs is not None:
            for name in ("outputs", "corrected", "r_full_norms", "snap_states"):
                setattr(out, name, [x for p in parts for x in getattr(p, name)])
        return out

    def delta(self, mode):
        return self.delta_rb[mode] + self.delta_i[mode]


class IndicatorSweep:
    """Evaluates the output error indicators of the current ROM over parameters.

    Parameters
    ----------
    fom : SemiImplicitFom
    training : TrainingSet
    cfg : GreedyConfig
    """

    def __init__(self, fom, training, cfg):
        self.fom = fom
        self.training = training
        self.cfg = cfg
        self.timings = {"infsup": 0.0, "dual": 0.0}
        t0 = time.perf_counter()
        self.surrogate = None
        if not fom.is_E_parametric:
            mu0 = training.points[0]
            s = smallest_singular_value(fom.E(mu0))
            self._sigma = lambda mu, s=s: s
        elif cfg.infsup == "direct":
            vals = {tuple(mu): smallest_singular_value(fom.E(mu)) for mu in training.points}
            self._sigma = lambda mu, v=vals: v.get(tuple(np.atleast_1d(mu)),
                                                   None) or smallest_singular_value(fom.E(mu))
        else:
            self.surrogate = build_surrogate(training, fom.E, tol_change=cfg.infsup_tol_change,
                                             max_centers=cfg.infsup_max_centers)
            self._sigma = lambda mu, s=self.surrogate: float(s(np.atleast_1d(mu))[0])
        self.timings["infsup"] = time.perf_counter() - t0
        mode = cfg.dual
        if mode == "auto":
            mode = "rb" if fom.is_E_parametric else "krylov"
        if mode == "krylov" and fom.is_E_parametric:
            raise InvalidInputError("Krylov dual needs a parameter-independent E")
        self.dual_mode = mode
        self.dual_rb = None
        self._dual_fixed = None
        t0 = time.perf_counter()
        if mode == "krylov":
            self._dual_fixed = dual_solve_nonparametric(
                fom, tol=cfg.gmres_tol, drop_tol=cfg.ilu_drop_tol,
                mu=training.points[0] if fom.domain.dim else None)
        elif mode == "rb":
            self.dual_rb = DualReducedBasis(fom, training.points[0])
        self.timings["dual"] += time.perf_counter() - t0

    def sigma(self, mu):
        return self._sigma(mu)

    def update_dual(self, mu_hint=None):
        """Grow the parametric dual basis once; no-op for the other modes."""
        if self.dual_rb is None:
            return False
        t0 = time.perf_counter()
        tol = self.cfg.dual_tol if self.cfg.dual_tol is not None else self.cfg.tol
        grew = update_v_du(self.dual_rb, self.training.points, tol)
        self.timings["dual"] += time.perf_counter() - t0
        return grew

    def dual(self, mu, V):
        if self._dual_fixed is not None:
            return self._dual_fixed
        if self.dual_mode == "rb":
            return self.dual_rb.solve(mu)
        return dual_from_primal_basis(self.fom, V, mu)

    def evaluate(self, rom, fine, rho, mus, keep=False):
        """Indicators for ``rom`` at ``mus``.

        ``fine`` is a nested larger interpolation basis used for the
        interpolation error estimate (``None`` gives ``Delta_I = 0``).
        With ``cfg.jobs > 1`` contiguous blocks of ``mus`` are evaluated by
        forked worker processes and concatenated in order, so the result does
        not depend on the number of workers. Processes rather than threads:
        single-threaded OpenBLAS builds are not safe for concurrent calls.
        Without ``fork`` (non-POSIX platforms) the sweep runs serially.
        """
        global _FORK_WORK
        mus = np.atleast_2d(np.asarray(mus, dtype=float))
        if self.fom.domain.dim == 0:
            mus = np.zeros((mus.shape[0], 0))
        jobs = min(self.cfg.jobs, mus.shape[0])
        if jobs <= 1 or "fork" not in multiprocessing.get_all_start_methods():
            return self._evaluate_block(rom, fine, rho, mus, keep)
        blocks = np.array_split(np.arange(mus.shape[0]), jobs)
        # the children inherit the (unpicklable) model through the fork
        _FORK_WORK = (self, rom, fine, rho, mus, keep)
        try:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as ex:
                parts = list(ex.map(_evaluate_forked, blocks))
        finally:
            _FORK_WORK = None
        return SweepResult.concat(parts)

    def _evaluate_block(self, rom, fine, rho, mus, keep):
        fom = self.fom
        m = mus.shape[0]
        batch = simulate_rom_batch(rom, mus)
        ind = None
        if fine is not None and rom.interp is not None and fine.size > rom.interp.size:
            ind = InterpErrorIndicator(rom.interp, fine)
        out = SweepResult(mus, {k: np.full(m, np.inf) for k in ("original", "modified")},
                          {k: np.zeros(m) for k in ("original", "modified")}, batch.unstable.copy())
        if keep:
            out.outputs, out.corrected, out.r_full_norms, out.snap_states = [None] * m, [None] * m, [None] * m, [None] * m
        V = rom.V
        for i, mu in enumerate(mus):
            if batch.unstable[i]:
                continue
            xs = V @ batch.snap_states[i]
            xp = V @ batch.prev_states[i]
            res = primal_residuals(fom, mu, xs, xp, interp=rom.interp, steps=batch.snapshot_steps[i])
            if ind is not None:
                di = fom.dt * ind.norm(res.f_prev[ind.fine.indices])
            else:
                di = np.zeros(xs.shape[1])
            dual = self.dual(mu, V)
            sig = self.sigma(mu)
            rin = res.interp_norms
            for mode in ("original", "modified"):
                rep = output_indicator(mode, rho, sig, dual, rin, di)
                out.delta_rb[mode][i] = rep.delta_rb
                out.delta_i[mode][i] = rep.delta_i
            if keep:
                out.outputs[i] = batch.outputs[i]
                out.corrected[i] = batch.outputs[i] - dual.x_du.T @ res.r_full
                out.r_full_norms[i] = res.full_norms
                out.snap_states[i] = xs
        return out


_FORK_WORK = None


def _evaluate_forked(block):
    sweep, rom, fine, rho, mus, keep = _FORK_WORK
    return sweep._evaluate_block(rom, fine, rho, mus[block], keep)


def _rho_and_errors(sweep, rom, fine, rho_prev, traj):
    """rho_bar at a parameter with a known FOM trajectory plus true errors and
    effectivities of both indicators there."""
    res = sweep.evaluate(rom, fine, 1.0, traj.mu, keep=True)
    if res.unstable[0]:
        return rho_prev, float("inf"), float("nan"), float("nan")
    try:
        rho = rho_bar(sweep.fom, traj.mu, traj.states, res.snap_states[0], res.r_full_norms[0])
    except DegenerateRhoError:
        log.info("rho_bar degenerate at mu=%s, keeping %g", traj.mu, rho_prev)
        rho = rho_prev
    y = traj.snapshot_outputs
    err_plain = true_mean_output_error(y, res.outputs[0])
    err_corr = true_mean_output_error(y, res.corrected[0])
    ind = sweep.evaluate(rom, fine, rho, traj.mu)
    eff_o = ind.delta("original")[0] / err_plain if err_plain > 0 else float("nan")
    eff_m = ind.delta("modified")[0] / err_corr if err_corr > 0 else float("nan")
    return rho, err_corr, eff_o, eff_m


def _initial_index(training, seed):
    if seed is None:
        return 0
    return int(np.random.default_rng(seed).integers(len(training)))


def _argmax(delta):
    # first index wins on ties; all-infinite picks the first as well
    return int(np.argmax(delta))


POOL_COMPRESS_TOL = 1e-13


def _new_pool(cfg):
    # DEIM only needs the left singular vectors, so the raw columns are dropped
    if cfg.method == "DEIM":
        return NonlinearSnapshotPool(keep_raw=False, compress_tol=POOL_COMPRESS_TOL)
    return NonlinearSnapshotPool()


def _pool_trajectory(pool, traj, cfg):
    pool.add(traj.mu, traj.nonlinear_snapshots)
    if not pool.keep_raw:
        traj.nonlinear_snapshots = None


def _fine_and_coarse(pool, ell, cfg):
    if cfg.method == "EIM":
        fine = eim_build(pool, max_iter=ell + cfg.fine_margin, eps=cfg.eps_ei)
    else:
        fine = deim_build(pool, count=ell + cfg.fine_margin)
    coarse = fine.truncate(ell)
    return coarse, (fine if fine.size > coarse.size else None)


# ---------------------------------------------------------------------------
# standard drivers


def _standard_loop(fom, training, cfg, interp, fine, cache, algorithm, state, sweep):
    t_start = time.perf_counter()
    V = np.zeros((fom.N, 0))
    prov = []
    j_star = _initial_index(training, cfg.seed)
    mu_star = training.points[j_star]
    rho = 1.0
    for it in range(1, cfg.max_iter + 1):
        key = tuple(mu_star)
        if key not in cache:
            cache[key] = simulate_fom(fom, mu_star)
            state.fom_calls += 1
        traj = cache[key]
        X = traj.states - V @ (V.T @ traj.states)
        X -= V @ (V.T @ X)
        if cfg.adss_tol is not None:
            _, X = adss_filter(X, cfg.adss_tol)
        modes = pod(X, count=1)
        n_old = V.shape[1]
        V = orth_extend(V, modes.V)
        prov.extend((mu_star.copy(), i) for i in range(V.shape[1] - n_old))
        state.selected.append(mu_star.copy())
        rom = ReducedModel(fom, V, interp)
        sweep.update_dual()
        rho, err, eff_o, eff_m = _rho_and_errors(sweep, rom, fine, rho, traj)
        res = sweep.evaluate(rom, fine, rho, training.points)
        delta = res.delta(cfg.indicator)
        j = _argmax(delta)
        state.records.append(IterationRecord(
            it, mu_star.copy(), V.shape[1] - n_old, V.shape[1],
            0 if interp is None else interp.size,
            float(res.delta_rb[cfg.indicator][j]), float(res.delta_i[cfg.indicator][j]),
            float(delta[j]), float(delta[j]), training.points[j].copy(), err, rho, eff_o, eff_m,
            state.fom_calls, time.perf_counter() - t_start))
        log.info("%s it %d: l_RB=%d max delta=%.3e at %s", algorithm, it, V.shape[1], delta[j],
                 training.points[j])
        state.V = ReducedBasis(V, prov)
        state.rho = rho
        if delta[j] <= cfg.tol:
            state.cause = "tol"
            break
        if V.shape[1] == n_old:
            state.cause = "stagnation"
            break
        mu_star = training.points[j]
    else:
        state.cause = "max_iter"
    state.timings["greedy"] = time.perf_counter() - t_start
    return state


def pod_greedy_standard(fom, training, cfg):
    """POD-Greedy with the nonlinear term evaluated in full dimension."""
    t0 = time.perf_counter()
    state = GreedyState("pod-greedy", cfg)
    sweep = IndicatorSweep(fom, training, cfg)
    state.infsup = sweep.surrogate
    cache = {}
    _standard_loop(fom, training, cfg, None, None, cache, "pod-greedy", state, sweep)
    state.dual = sweep.dual_rb
    state.trajectories = cache
    state.timings.update({k: v for k, v in sweep.timings.items()})
    state.timings["total"] = time.perf_counter() - t0
    return state


def pod_greedy_deim_standard(fom, training, cfg):
    """Standard POD-Greedy-(D)EIM: FOM at every training point first, a
    conservatively large interpolation basis from all nonlinear snapshots,
    then POD-Greedy with the interpolated ROM."""
    t0 = time.perf_counter()
    state = GreedyState("pod-greedy-" + cfg.method.lower(), cfg)
    cache = {}
    pool = _new_pool(cfg)
    for mu in training.points:
        traj = simulate_fom(fom, mu)
        cache[tuple(mu)] = traj
        _pool_trajectory(pool, traj, cfg)
        state.fom_calls += 1
    state.timings["fom_all"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    if cfg.method == "EIM":
        interp = eim_build(pool, max_iter=cfg.standard_ei_max, eps=cfg.eps_ei)
    else:
        interp = deim_build(pool, energy=cfg.eps_pod)
    state.timings["ei"] = time.perf_counter() - t1
    state.interp = interp
    sweep = IndicatorSweep(fom, training, cfg)
    state.infsup = sweep.surrogate
    _standard_loop(fom, training, cfg, interp, None, cache, state.algorithm, state, sweep)
    state.dual = sweep.dual_rb
    state.trajectories = cache
    state.timings.update({k: v for k, v in sweep.timings.items()})
    state.timings["total"] = time.perf_counter() - t0
    return state


# ---------------------------------------------------------------------------
# adaptive drivers


def adaptive_pod_deim_twoway(fom, V_full, interp_full, cfg, trajectory=None):
    """Two-way adaptive choice of (l_RB, l_EI) for a non-parametric model.

    ``V_full`` and ``interp_full`` are conservatively large nested bases;
    each iteration truncates them to the current counts, evaluates the
    indicator and applies the update rule (cumulatively for both counts).
    """
    t0 = time.perf_counter()
    if fom.is_E_parametric or fom.domain.dim:
        raise InvalidInputError("the two-way loop is for non-parametric models")
    if isinstance(V_full, ReducedBasis):
        V_full = V_full.V
    n_rb, n_ei = V_full.shape[1], interp_full.size
    if n_rb < 1 or n_ei < 1:
        raise InvalidInputError("empty input bases")
    training = TrainingSet.single(fom.domain)
    mu = training.points[0]
    if trajectory is None:
        trajectory = simulate_fom(fom, mu)
    state = GreedyState("twoway-" + cfg.method.lower(), cfg)
    sweep = IndicatorSweep(fom, training, cfg)
    lr = min(cfg.initial[0], n_rb)
    le = min(cfg.initial[1], n_ei)
    seen = set()
    rho = 1.0
    state.extras["initial"] = (lr, le)
    state.extras["path"] = []
    for it in range(1, cfg.max_iter + 1):
        seen.add((lr, le))
        V = V_full[:, :lr]
        coarse = interp_full.truncate(le)
        fine = interp_full.truncate(le + cfg.fine_margin) if n_ei > le else None
        rom = ReducedModel(fom, V, coarse)
        rho, err, eff_o, eff_m = _rho_and_errors(sweep, rom, fine, rho, trajectory)
        res = sweep.evaluate(rom, fine, rho, training.points)
        mode = cfg.indicator
        drb, di = float(res.delta_rb[mode][0]), float(res.delta_i[mode][0])
        delta = drb + di
        state.records.append(IterationRecord(
            it, mu, 0, lr, le, drb, di, delta, delta, mu, err, rho, eff_o, eff_m, 0,
            time.perf_counter() - t0))
        state.extras["path"].append((lr, le, delta))
        state.V, state.interp, state.rho = ReducedBasis(V), coarse, rho
        log.info("twoway it %d: (%d, %d) delta=%.3e (rb %.2e, ei %.2e)", it, lr, le, delta, drb, di)
        if cfg.in_zoa(delta):
            state.cause = "zoa"
            break
        upd = adapt_basis_update(lr, le, drb, di, cfg.tol, cfg.tol_EI, lr, cfg.max_shrink)
        new_lr = min(max(lr + upd.rb_increment, 1), n_rb)
        new_le = min(max(le + max(upd.ei_increment, -cfg.max_shrink), new_lr + 1, 1), n_ei)
        if (new_lr, new_le) in seen:
            state.cause = "stagnation"
            log.info("twoway: (%d, %d) revisited", new_lr, new_le)
            break
        lr, le = new_lr, new_le
    else:
        state.cause = "max_iter"
    state.trajectories = {(): trajectory}
    state.timings.update(sweep.timings)
    state.timings["total"] = time.perf_counter() - t0
    return state


def adaptive_pod_greedy_deim(fom, training, cfg):
    """Adaptive POD-Greedy-(D)EIM.

    The FOM is run only at selected parameters; RB and interpolation bases
    grow or shrink by the update rule until the indicator at the selected
    parameter lies in the zone of acceptance.
    """
    t0 = time.perf_counter()
    state = GreedyState("adaptive-" + cfg.method.lower(), cfg)
    sweep = IndicatorSweep(fom, training, cfg)
    state.infsup = sweep.surrogate
    pool = _new_pool(cfg)
    cache = {}
    V = np.zeros((fom.N, 0))
    prov = []
    ell_rb, ell_ei = cfg.initial
    mu_star = training.points[_initial_index(training, cfg.seed)]
    rho = 1.0
    t_fom = t_ei = 0.0
    stall = []
    for it in range(1, cfg.max_iter + 1):
        key = tuple(mu_star)
        n_old = V.shape[1]
        if ell_rb < 0:
            keep = max(V.shape[1] + ell_rb, 1)
            V = V[:, :keep].copy()
            prov = prov[:keep]
        else:
            if key not in cache:
                t1 = time.perf_counter()
                cache[key] = simulate_fom(fom, mu_star)
                t_fom += time.perf_counter() - t1
                state.fom_calls += 1
                _pool_trajectory(pool, cache[key], cfg)
                state.selected.append(mu_star.copy())
            X = cache[key].states
            X = X - V @ (V.T @ X)
            X -= V @ (V.T @ X)
            if cfg.adss_tol is not None:
                _, X = adss_filter(X, cfg.adss_tol)
            if ell_rb > 0:
                V = orth_extend(V, pod(X, count=ell_rb).V)
                prov.extend((mu_star.copy(), i) for i in range(V.shape[1] - n_old))
        t1 = time.perf_counter()
        coarse, fine = _fine_and_coarse(pool, ell_ei, cfg)
        t_ei += time.perf_counter() - t1
        sweep.update_dual()
        rom = ReducedModel(fom, V, coarse)
        err = eff_o = eff_m = float("nan")
        if key in cache:
            rho, err, eff_o, eff_m = _rho_and_errors(sweep, rom, fine, rho, cache[key])
        res = sweep.evaluate(rom, fine, rho, training.points)
        delta = res.delta(cfg.indicator)
        j = _argmax(delta)
        drb = float(res.delta_rb[cfg.indicator][j])
        di = float(res.delta_i[cfg.indicator][j])
        state.records.append(IterationRecord(
            it, mu_star.copy(), V.shape[1] - n_old, V.shape[1], coarse.size, drb, di,
            float(delta[j]), float(delta[j]), training.points[j].copy(), err, rho, eff_o, eff_m,
            state.fom_calls, time.perf_counter() - t0))
        log.info("adaptive it %d: (%d, %d) max delta=%.3e (rb %.2e, ei %.2e) rho=%.3f",
                 it, V.shape[1], coarse.size, delta[j], drb, di, rho)
        state.V, state.interp, state.rho = ReducedBasis(V, list(prov)), coarse, rho
        state.extras["fine"] = fine
        if cfg.in_zoa(float(delta[j])):
            state.cause = "zoa"
            break
        upd = adapt_basis_update(ell_rb, coarse.size, drb, di, cfg.tol, cfg.tol_EI,
                                 V.shape[1], cfg.max_shrink)
        ell_rb, ell_ei = upd.ell_rb_next, upd.ell_ei_next
        mu_star = training.points[j]
        stall.append((j, float(delta[j])))
        w = cfg.stagnation_window
        if len(stall) > w:
            last = stall[-(w + 1):]
            flat = all(b[1] >= a[1] for a, b in zip(last, last[1:]))
            if len({s[0] for s in last}) == 1 and flat:
                state.cause = "stagnation"
                break
    else:
        state.cause = "max_iter"
    state.dual = sweep.dual_rb
    state.trajectories = cache
    state.extras["pool_columns"] = pool.n_columns
    state.timings.update(sweep.timings)
    state.timings.update({"fom": t_fom, "ei": t_ei, "total": time.perf_counter() - t0})
    return state


# ---------------------------------------------------------------------------
# validation


def validation_effectivities(fom, state, training, mus, trajectories=None):
    """Indicator effectivities of the final ROM at ``mus``.

    The original indicator is compared with the plain ROM output error and
    the modified one with the error of the corrected output. Returns a dict
    of arrays.
    """
    cfg = state.config
    sweep = IndicatorSweep(fom, training, cfg)
    if sweep.dual_rb is not None and state.dual is not None:
        sweep.dual_rb = state.dual
    rom = ReducedModel(fom, state.V, state.interp)
    fine = state.extras.get("fine")
    res = sweep.evaluate(rom, fine, state.rho, mus, keep=True)
    trajectories = trajectories or {}
    out = {k: [] for k in ("delta_original", "delta_modified", "error_plain", "error_corrected",
                           "eff_original", "eff_modified")}
    for i, mu in enumerate(res.mus):
        traj = trajectories.get(tuple(mu)) or simulate_fom(fom, mu)
        if res.unstable[i]:
            for k in out:
                out[k].append(np.inf)
            continue
        y = traj.snapshot_outputs
        ep = true_mean_output_error(y, res.outputs[i])
        ec = true_mean_output_error(y, res.corrected[i])
        do, dm = res.delta("original")[i], res.delta("modified")[i]
        out["delta_original"].append(do)
        out["delta_modified"].append(dm)
        out["error_plain"].append(ep)
        out["error_corrected"].append(ec)
        out["eff_original"].append(do / ep if ep > 0 else np.nan)
        out["eff_modified"].append(dm / ec if ec > 0 else np.nan)
    return {k: np.array(v) for k, v in out.items()}
