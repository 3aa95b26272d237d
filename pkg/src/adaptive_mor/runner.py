"""Run configured experiments and write their artifacts.

Every run directory holds

* ``config.yaml``     resolved configuration
* ``iterations.csv``  one row per greedy iteration (:data:`ITERATION_COLUMNS`)
* ``summary.json``    :class:`RunSummary` (``schema_version`` field)
* ``manifest.json``   bases and model id, enough for :func:`load_rom`
* ``V.bin``, ``U.bin`` and, for a parametric dual, ``V_du.bin``

plus pipeline specific tables (``validation.csv``, ``infsup.csv``,
``fom_outputs.csv``). File formats are described in ``docs/formats.md``.
"""

from dataclasses import asdict, dataclass, field
import json
import logging
import math
from pathlib import Path
import time

import numpy as np

from .config import build_model, build_training, dump_config, parse_config
from .errors import InvalidInputError, NumericFailureError
from .fom_models import simulate_fom
from .greedy import (
    ITERATION_COLUMNS,
    adaptive_pod_deim_twoway,
    adaptive_pod_greedy_deim,
    pod_greedy_deim_standard,
    pod_greedy_standard,
    validation_effectivities,
)
from .infsup import build_surrogate, direct_sweep
from .interpolation import InterpBasis, deim_build, eim_build
from .io import config_hash, read_matrix, read_rows_csv, write_json, write_matrix, write_rows_csv
from .reduction import ReducedModel, pod

log = logging.getLogger(__name__)

__all__ = [
    "SCHEMA_VERSION",
    "RunSummary",
    "run_experiment",
    "compare_runs",
    "load_rom",
    "load_summary",
    "validate_iteration_csv",
    "SUCCESS_CAUSES",
]

SCHEMA_VERSION = 1
SUCCESS_CAUSES = ("zoa", "tol", "completed")

VALIDATION_COLUMNS = ["mu", "delta_original", "delta_modified", "error_plain",
                      "error_corrected", "eff_original", "eff_modified"]
INFSUP_COLUMNS = ["mu", "sigma_direct", "sigma_surrogate", "rel_error"]
COMPARISON_COLUMNS = ["name", "pipeline", "cause", "iterations", "ell_rb", "ell_ei", "fom_calls",
                      "seconds", "max_estimated", "max_true", "d_iterations", "d_ell_rb",
                      "d_ell_ei", "d_seconds"]
OVERLAY_COLUMNS = ["run", "iteration", "ell_rb", "ell_ei", "delta", "delta_max", "true_error",
                   "rho", "eff_original", "eff_modified"]


@dataclass
class RunSummary:
    name: str
    pipeline: str
    model: str
    model_params: dict
    cause: str
    iterations: int = 0
    sizes: tuple = (0, 0)
    timings: dict = field(default_factory=dict)
    max_estimated: float = float("nan")
    max_true: float = float("nan")
    fom_calls: int = 0
    output_dir: str = ""
    files: dict = field(default_factory=dict)
    config_hash: str = ""
    extras: dict = field(default_factory=dict)
    error: str = None
    schema_version: int = SCHEMA_VERSION

    @property
    def success(self):
        return self.cause in SUCCESS_CAUSES

    @property
    def seconds(self):
        return float(self.timings.get("total", float("nan")))

    def to_dict(self):
        d = asdict(self)
        d["sizes"] = list(self.sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise InvalidInputError(f"summary schema {d.get('schema_version')} != {SCHEMA_VERSION}")
        d = dict(d)
        d["sizes"] = tuple(d.get("sizes", (0, 0)))
        return cls(**d)


def load_summary(path):
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    with open(path) as fh:
        return RunSummary.from_dict(json.load(fh))


def _finite_max(values):
    vals = [v for v in values if v is not None and math.isfinite(v)]
    return max(vals) if vals else float("nan")


def _write_state(state, out, summary):
    rows = [r.as_row() for r in state.records]
    write_rows_csv(out / "iterations.csv", ITERATION_COLUMNS, rows)
    summary.files["iterations"] = "iterations.csv"
    summary.cause = state.cause
    summary.iterations = state.iterations
    summary.sizes = tuple(int(v) for v in state.sizes)
    summary.fom_calls = state.fom_calls
    summary.timings = {k: float(v) for k, v in state.timings.items()}
    summary.max_estimated = _finite_max(r.delta_max for r in state.records)
    summary.max_true = _finite_max(r.true_error for r in state.records)
    manifest = {"schema_version": SCHEMA_VERSION, "model": summary.model,
                "model_params": summary.model_params, "rho": state.rho}
    if state.V is not None:
        write_matrix(out / "V.bin", state.V.V)
        manifest["V"] = "V.bin"
    if state.interp is not None:
        write_matrix(out / "U.bin", state.interp.U)
        manifest["U"] = "U.bin"
        manifest["indices"] = state.interp.indices.tolist()
        manifest["method"] = state.interp.method
    if state.dual is not None and state.dual.V_du.shape[1]:
        write_matrix(out / "V_du.bin", state.dual.V_du)
        manifest["V_du"] = "V_du.bin"
    if state.infsup is not None:
        manifest["infsup"] = state.infsup.to_dict()
    manifest["selected"] = [np.atleast_1d(m).tolist() for m in state.selected]
    write_json(out / "manifest.json", manifest)
    summary.files.update({k: manifest[k] for k in ("V", "U", "V_du") if k in manifest})
    summary.files["manifest"] = "manifest.json"


def load_rom(run_dir):
    """Rebuild the model and the final ROM of a finished run from its manifest."""
    run_dir = Path(run_dir)
    with open(run_dir / "manifest.json") as fh:
        man = json.load(fh)
    cfg = parse_config({"model": man["model"], "model_params": man["model_params"]})
    fom = build_model(cfg)
    V = read_matrix(run_dir / man["V"])
    interp = None
    if "U" in man:
        interp = InterpBasis(read_matrix(run_dir / man["U"]), np.array(man["indices"], dtype=int),
                             man["method"])
    return fom, ReducedModel(fom, V, interp)


def _validation_points(training, selected, count):
    chosen = {tuple(np.atleast_1d(m)) for m in selected}
    free = [i for i, mu in enumerate(training.points) if tuple(mu) not in chosen]
    if not free:
        return np.zeros((0, training.points.shape[1]))
    take = np.unique(np.linspace(0, len(free) - 1, min(count, len(free))).round().astype(int))
    return training.points[[free[i] for i in take]]


def _run_validation(fom, state, training, count, out, summary):
    mus = _validation_points(training, state.selected, count)
    if not len(mus):
        return
    val = validation_effectivities(fom, state, training, mus, state.trajectories)
    rows = [{"mu": mu, **{k: val[k][i] for k in VALIDATION_COLUMNS[1:]}} for i, mu in enumerate(mus)]
    write_rows_csv(out / "validation.csv", VALIDATION_COLUMNS, rows)
    summary.files["validation"] = "validation.csv"
    summary.extras["validation_mean_eff_original"] = float(np.nanmean(val["eff_original"]))
    summary.extras["validation_mean_eff_modified"] = float(np.nanmean(val["eff_modified"]))


def _twoway_bases(fom, traj, cfg, gcfg):
    V = pod(traj.states, energy=cfg.twoway.get("eps_pod", gcfg.eps_pod)).V
    eps_ei = cfg.twoway.get("eps_ei", gcfg.eps_ei)
    if gcfg.method == "EIM":
        interp = eim_build(traj.nonlinear_snapshots, max_iter=traj.nonlinear_snapshots.shape[1],
                           eps=eps_ei)
    else:
        interp = deim_build(traj.nonlinear_snapshots, energy=eps_ei)
    return V, interp


def run_experiment(cfg):
    """Run ``cfg.pipeline`` and write its artifacts to ``cfg.output_dir``.

    A numerical failure inside the pipeline is recorded in the summary
    (``cause = "failed"``) together with whatever was written before it.
    """
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidInputError(f"output_dir: cannot create {out}: {exc}") from exc
    dump_config(cfg, out / "config.yaml")
    summary = RunSummary(cfg.name, cfg.pipeline, cfg.model, dict(cfg.model_params), "failed",
                         output_dir=str(out), files={"config": "config.yaml"},
                         config_hash=config_hash(cfg.to_dict()))
    fom = build_model(cfg)
    training = build_training(cfg, fom)
    gcfg = cfg.greedy_config()
    try:
        _dispatch(cfg, gcfg, fom, training, out, summary)
    except (NumericFailureError, np.linalg.LinAlgError) as exc:
        log.error("pipeline %s failed: %s", cfg.pipeline, exc)
        summary.cause = "failed"
        summary.error = f"{type(exc).__name__}: {exc}"
    summary.timings.setdefault("total", time.perf_counter() - t0)
    summary.timings["wall"] = time.perf_counter() - t0
    write_json(out / "summary.json", summary.to_dict())
    return summary


def _dispatch(cfg, gcfg, fom, training, out, summary):
    p = cfg.pipeline
    if p == "fom-sim":
        _fom_sim(fom, training, out, summary)
        return
    if p == "infsup-validate":
        _infsup_validate(fom, training, gcfg, out, summary)
        return
    if p == "twoway":
        mu = np.atleast_1d(cfg.twoway.get("mu", np.zeros(0)))
        traj = simulate_fom(fom, mu)
        V, interp = _twoway_bases(fom, traj, cfg, gcfg)
        summary.extras["full_sizes"] = [V.shape[1], interp.size]
        state = adaptive_pod_deim_twoway(fom, V, interp, gcfg, trajectory=traj)
        state.fom_calls = 1
        summary.extras["initial"] = list(state.extras["initial"])
    elif p == "standard":
        state = pod_greedy_standard(fom, training, gcfg)
    elif p == "standard-deim":
        state = pod_greedy_deim_standard(fom, training, gcfg)
    else:
        state = adaptive_pod_greedy_deim(fom, training, gcfg)
    if state.records:
        summary.extras["final_delta"] = state.records[-1].delta
        summary.extras["rho_first"] = state.records[0].rho
        summary.extras["rho_final"] = state.records[-1].rho
    _write_state(state, out, summary)
    if cfg.validation and p != "twoway":
        _run_validation(fom, state, training, cfg.validation, out, summary)


def _fom_sim(fom, training, out, summary):
    t0 = time.perf_counter()
    rows = []
    names = list(fom.output_names) if fom.output_names else [f"y{i}" for i in range(fom.n_outputs)]
    for i, mu in enumerate(training.points):
        traj = simulate_fom(fom, mu)
        for k in range(traj.outputs.shape[1]):
            row = {"mu_index": i, "mu": mu, "step": k + 1, "time": (k + 1) * fom.dt}
            row.update({n: traj.outputs[j, k] for j, n in enumerate(names)})
            rows.append(row)
    write_rows_csv(out / "fom_outputs.csv", ["mu_index", "mu", "step", "time", *names], rows)
    summary.files["fom_outputs"] = "fom_outputs.csv"
    summary.fom_calls = len(training)
    summary.cause = "completed"
    summary.timings["total"] = time.perf_counter() - t0


def _infsup_validate(fom, training, gcfg, out, summary):
    t0 = time.perf_counter()
    direct = direct_sweep(training, fom.E)
    t_direct = time.perf_counter() - t0
    t0 = time.perf_counter()
    sur = build_surrogate(training, fom.E, tol_change=gcfg.infsup_tol_change,
                          max_centers=gcfg.infsup_max_centers)
    approx = sur(training.points)
    t_sur = time.perf_counter() - t0
    rel = np.abs(approx - direct) / direct
    rows = [{"mu": mu, "sigma_direct": direct[i], "sigma_surrogate": approx[i],
             "rel_error": rel[i]} for i, mu in enumerate(training.points)]
    write_rows_csv(out / "infsup.csv", INFSUP_COLUMNS, rows)
    write_json(out / "surrogate.json", sur.to_dict())
    summary.files.update({"infsup": "infsup.csv", "surrogate": "surrogate.json"})
    summary.cause = "completed"
    summary.timings.update({"direct": t_direct, "surrogate": t_sur, "total": t_direct + t_sur})
    summary.extras.update({"max_rel_error": float(rel.max()), "centers": len(sur.values),
                           "converged": sur.converged,
                           "speedup": t_direct / t_sur if t_sur > 0 else float("inf")})
    summary.max_estimated = float(rel.max())


def validate_iteration_csv(path):
    """Check an iteration log against the documented schema; returns the rows."""
    rows = read_rows_csv(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header != ITERATION_COLUMNS:
        raise InvalidInputError(f"{path}: header {header} != {ITERATION_COLUMNS}")
    ints = ("iteration", "ell_rb_inc", "ell_rb", "ell_ei", "fom_calls")
    for n, row in enumerate(rows, 1):
        for k in ints:
            int(row[k])
        for k in ITERATION_COLUMNS:
            if k in ints:
                continue
            for tok in row[k].split():
                float(tok)
        if int(row["iteration"]) != n:
            raise InvalidInputError(f"{path}: iteration column out of order at row {n}")
        if int(row["ell_rb"]) < 0 or int(row["ell_ei"]) < 0:
            raise InvalidInputError(f"{path}: negative basis size at row {n}")
    return rows


def compare_runs(summaries, out_dir=None):
    """Aligned table of runs on the same model; deltas are relative to the first.

    ``summaries`` holds :class:`RunSummary` objects or run directories. With
    ``out_dir`` the table is written as ``comparison.csv`` /
    ``comparison.json`` and the per-iteration curves as ``overlay.csv``.
    """
    sums = [s if isinstance(s, RunSummary) else load_summary(s) for s in summaries]
    if len(sums) < 2:
        raise InvalidInputError("need at least two runs to compare")
    ref = sums[0]
    for s in sums[1:]:
        if s.model != ref.model or s.model_params != ref.model_params:
            raise InvalidInputError(f"run {s.name!r} uses model {s.model} {s.model_params}, "
                                    f"reference uses {ref.model} {ref.model_params}")
    table = []
    for s in sums:
        table.append({
            "name": s.name, "pipeline": s.pipeline, "cause": s.cause, "iterations": s.iterations,
            "ell_rb": s.sizes[0], "ell_ei": s.sizes[1], "fom_calls": s.fom_calls,
            "seconds": s.seconds, "max_estimated": s.max_estimated, "max_true": s.max_true,
            "d_iterations": s.iterations - ref.iterations,
            "d_ell_rb": s.sizes[0] - ref.sizes[0], "d_ell_ei": s.sizes[1] - ref.sizes[1],
            "d_seconds": s.seconds - ref.seconds,
        })
    overlay = []
    for s in sums:
        path = Path(s.output_dir) / s.files.get("iterations", "iterations.csv")
        if not path.exists():
            continue
        for row in read_rows_csv(path):
            overlay.append({"run": s.name, **{k: row[k] for k in OVERLAY_COLUMNS[1:]}})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_rows_csv(out / "comparison.csv", COMPARISON_COLUMNS, table)
        write_json(out / "comparison.json", {"schema_version": SCHEMA_VERSION, "runs": table})
        write_rows_csv(out / "overlay.csv", OVERLAY_COLUMNS, overlay)
    return table, overlay
