"""RBF surrogate for the inf-sup constant ``sigma_min(E(mu))``.

``log sigma_min`` is interpolated by a thin-plate spline with a linear
polynomial tail (``scipy.interpolate.RBFInterpolator``) on a small set of
centres that is enriched greedily. Exponentiating keeps every estimate
positive.
"""

from dataclasses import dataclass, field
import logging
import time

import numpy as np
from scipy.interpolate import RBFInterpolator
from scipy.stats import qmc

from .errors import InvalidInputError, NumericFailureError
from .linalg_core import smallest_singular_value

log = logging.getLogger(__name__)

__all__ = ["InfSupSurrogate", "build_surrogate", "eval_surrogate", "criterion",
           "direct_sweep"]


@dataclass
class InfSupSurrogate:
    centers: np.ndarray  # (n, d) in parameter coordinates
    values: np.ndarray  # sigma_min at the centres
    kernel: str
    lo: np.ndarray
    hi: np.ndarray
    log_axes: tuple = ()
    changes: list = field(default_factory=list)
    converged: bool = True
    build_seconds: float = 0.0
    _interp: object = field(default=None, repr=False)

    def _scaled(self, mus):
        return _scale(np.atleast_2d(mus), self.lo, self.hi, self.log_axes)

    def fit(self):
        if self.centers.shape[1] == 0 or len(self.values) < 2:
            self._interp = None
            return self
        self._interp = _fit(self._scaled(self.centers), np.log(self.values), self.kernel)
        return self

    def __call__(self, mus):
        mus = np.atleast_2d(np.asarray(mus, dtype=float))
        if self._interp is None:
            return np.full(mus.shape[0], float(self.values[0]))
        return np.exp(self._interp(self._scaled(mus)))

    def to_dict(self):
        return {
            "centers": self.centers.tolist(),
            "values": self.values.tolist(),
            "kernel": self.kernel,
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "log_axes": list(self.log_axes),
            "changes": list(self.changes),
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d):
        s = cls(np.asarray(d["centers"], float).reshape(len(d["values"]), -1),
                np.asarray(d["values"], float), d["kernel"], np.asarray(d["lo"], float),
                np.asarray(d["hi"], float), tuple(d.get("log_axes", ())),
                list(d.get("changes", [])), bool(d.get("converged", True)))
        return s.fit()


def _scale(mus, lo, hi, log_axes):
    out = np.array(mus, dtype=float, copy=True)
    for i in range(out.shape[1]):
        a, b = lo[i], hi[i]
        if i in log_axes:
            out[:, i], a, b = np.log10(out[:, i]), np.log10(a), np.log10(b)
        out[:, i] = (out[:, i] - a) / (b - a) if b > a else 0.0
    return out


def _fit(x, y, kernel):
    degree = 1 if x.shape[0] >= x.shape[1] + 1 else 0
    for jitter in (0.0, 1e-12, 1e-9):
        try:
            return RBFInterpolator(x, y, kernel=kernel, degree=degree, smoothing=jitter)
        except (np.linalg.LinAlgError, ValueError) as exc:
            log.info("RBF fit failed with smoothing %g: %s", jitter, exc)
    raise NumericFailureError("RBF kernel matrix is singular")


def criterion(s_vals, scaled_pts, center_idx):
    """``|s(mu) - s(nearest centre)| * dist(mu, centres)`` over the samples.

    ``s_vals`` are surrogate values (log scale) at all samples, ``center_idx``
    the sample indices of the current centres.
    """
    C = scaled_pts[center_idx]
    d = np.linalg.norm(scaled_pts[:, None, :] - C[None, :, :], axis=2)
    nearest = np.argmin(d, axis=1)
    dist = d[np.arange(d.shape[0]), nearest]
    return np.abs(s_vals - s_vals[np.asarray(center_idx)[nearest]]) * dist


def _initial_centers(scaled, n_coarse, seed):
    d = scaled.shape[1]
    corners = np.array(np.meshgrid(*[[0.0, 1.0]] * d, indexing="ij")).reshape(d, -1).T
    targets = [*corners, np.full(d, 0.5)]
    lhs = qmc.LatinHypercube(d=d, seed=seed).random(max(n_coarse, 1))
    targets.extend(lhs)
    chosen = []
    for t in targets:
        dist = np.linalg.norm(scaled - t, axis=1)
        dist[chosen] = np.inf
        j = int(np.argmin(dist))
        if np.isfinite(dist[j]):
            chosen.append(j)
        if len(chosen) == min(n_coarse, scaled.shape[0]):
            break
    return chosen


def build_surrogate(training, matrix_builder, n_coarse=None, tol_change=1e-2,
                    max_centers=15, kernel="thin_plate_spline", sigma_fn=None, seed=0):
    """Greedy RBF surrogate of ``sigma_min(matrix_builder(mu))`` over ``training``.

    ``sigma_fn`` (default :func:`smallest_singular_value`) is only evaluated
    at the centres. Stops when the max relative change between successive
    interpolants over the training points drops below ``tol_change`` or when
    ``max_centers`` is reached (then ``converged`` is ``False``).
    """
    t0 = time.perf_counter()
    sigma_fn = sigma_fn or smallest_singular_value
    pts = training.points
    dom = training.domain
    lo, hi = np.asarray(dom.lo, float), np.asarray(dom.hi, float)
    d = dom.dim
    log_axes = tuple(range(d)) if training.sampling == "log-uniform" else ()

    def sigma_at(mu):
        s = sigma_fn(matrix_builder(mu))
        if not s > 0:
            raise NumericFailureError(f"sigma_min = {s} at mu={mu}; log transform undefined")
        return s

    if d == 0 or len(training) == 1:
        s = sigma_at(pts[0])
        return InfSupSurrogate(pts[:1], np.array([s]), kernel, lo, hi, log_axes,
                               build_seconds=time.perf_counter() - t0).fit()
    n_coarse = max(d + 1, 4) if n_coarse is None else n_coarse
    if n_coarse < d + 1:
        raise InvalidInputError("need at least d+1 initial centres")
    scaled = _scale(pts, lo, hi, log_axes)
    idx = _initial_centers(scaled, n_coarse, seed)
    vals = [sigma_at(pts[j]) for j in idx]
    sur = InfSupSurrogate(pts[idx], np.array(vals), kernel, lo, hi, log_axes).fit()
    prev = sur(pts)
    converged = False
    while len(idx) < min(max_centers, len(training)):
        crit = criterion(np.log(prev), scaled, idx)
        crit[idx] = -np.inf
        j = int(np.argmax(crit))
        idx.append(j)
        vals.append(sigma_at(pts[j]))
        sur = InfSupSurrogate(pts[idx], np.array(vals), kernel, lo, hi, log_axes,
                              changes=sur.changes).fit()
        cur = sur(pts)
        change = float(np.max(np.abs(cur - prev) / np.abs(prev)))
        sur.changes.append(change)
        prev = cur
        if change < tol_change:
            converged = True
            break
    sur.converged = converged
    sur.build_seconds = time.perf_counter() - t0
    return sur


def eval_surrogate(s, mu):
    return float(s(np.atleast_1d(mu))[0])


def direct_sweep(training, matrix_builder, sigma_fn=None):
    sigma_fn = sigma_fn or smallest_singular_value
    return np.array([sigma_fn(matrix_builder(mu)) for mu in training.points])
