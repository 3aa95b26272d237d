"""Experiment configuration files.

A config is a YAML mapping with the keys of :class:`ExperimentConfig`. The
``model_params`` block may pull in other files with ``include`` (a path or a
list of paths, relative to the including file); keys given inline override
included ones. Example::

    name: burgers-adaptive
    model: burgers
    model_params: {N: 500}
    training: {counts: [100], log_axes: [0]}
    pipeline: adaptive-greedy
    greedy: {tol: 1.0e-3, method: EIM}
"""

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import InvalidInputError
from .fom_models import (
    ChromatographyCoefficients,
    TrainingSet,
    assemble_burgers,
    assemble_chromatography,
    assemble_synthetic_rd,
)
from .greedy import GreedyConfig

__all__ = [
    "MODELS",
    "PIPELINES",
    "ExperimentConfig",
    "load_config",
    "dump_config",
    "parse_config",
    "build_model",
    "build_training",
    "apply_overrides",
]

MODELS = {
    "burgers": assemble_burgers,
    "chromatography": assemble_chromatography,
    "synthetic_rd": assemble_synthetic_rd,
}

PIPELINES = ("standard", "standard-deim", "adaptive-greedy", "twoway", "infsup-validate",
             "fom-sim")

_GREEDY_FIELDS = {f.name for f in fields(GreedyConfig)}


@dataclass
class ExperimentConfig:
    """One experiment.

    ``training`` holds ``counts`` (points per axis) and optionally
    ``log_axes``; it is ignored for non-parametric models. ``validation``
    is the number of training points (not selected by the greedy loop) at
    which effectivities of the final ROM are reported, 0 to skip.
    """

    name: str = "experiment"
    model: str = "burgers"
    model_params: dict = field(default_factory=dict)
    training: dict = field(default_factory=lambda: {"counts": [10]})
    pipeline: str = "adaptive-greedy"
    greedy: dict = field(default_factory=dict)
    output_dir: str = "runs/experiment"
    seed: int = None
    validation: int = 0
    twoway: dict = field(default_factory=dict)  # energy levels of the full bases

    def __post_init__(self):
        if self.model not in MODELS:
            raise InvalidInputError(f"model: unknown model id {self.model!r}, "
                                    f"expected one of {sorted(MODELS)}")
        if self.pipeline not in PIPELINES:
            raise InvalidInputError(f"pipeline: unknown pipeline {self.pipeline!r}, "
                                    f"expected one of {list(PIPELINES)}")
        bad = set(self.greedy) - _GREEDY_FIELDS
        if bad:
            raise InvalidInputError(f"greedy: unknown field(s) {sorted(bad)}")
        if not isinstance(self.training, dict) or "counts" not in self.training:
            raise InvalidInputError("training: needs a 'counts' list")
        if self.validation < 0:
            raise InvalidInputError("validation: must be >= 0")
        bad = set(self.twoway) - {"eps_pod", "eps_ei", "mu"}
        if bad:
            raise InvalidInputError(f"twoway: unknown field(s) {sorted(bad)}")
        try:
            self.greedy_config()
        except InvalidInputError as exc:
            raise InvalidInputError(f"greedy: {exc}") from exc

    def greedy_config(self):
        g = dict(self.greedy)
        if self.seed is not None and "seed" not in g:
            g["seed"] = self.seed
        return GreedyConfig(**g)

    def to_dict(self):
        return asdict(self)


def _read_yaml(path):
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return {} if data is None else data


def _resolve_includes(block, base_dir, seen=()):
    if not isinstance(block, dict):
        raise InvalidInputError("model_params: must be a mapping")
    inc = block.get("include")
    if inc is None:
        return dict(block)
    merged = {}
    for rel in [inc] if isinstance(inc, str) else list(inc):
        path = (base_dir / rel).resolve()
        if path in seen:
            raise InvalidInputError(f"model_params: include cycle at {path}")
        if not path.exists():
            raise InvalidInputError(f"model_params: included file {path} not found")
        merged.update(_resolve_includes(_read_yaml(path), path.parent, seen + (path,)))
    merged.update({k: v for k, v in block.items() if k != "include"})
    return merged


def parse_config(data, base_dir="."):
    """Build a config from an already parsed mapping."""
    if not isinstance(data, dict):
        raise InvalidInputError("config must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    bad = set(data) - known
    if bad:
        raise InvalidInputError(f"unknown config field(s) {sorted(bad)}")
    data = dict(data)
    data["model_params"] = _resolve_includes(data.get("model_params") or {}, Path(base_dir))
    for key in ("greedy", "training", "twoway"):
        if data.get(key) is None:
            data.pop(key, None)
    return ExperimentConfig(**data)


def load_config(path):
    path = Path(path)
    return parse_config(_read_yaml(path), path.parent)


def dump_config(cfg, path=None):
    """YAML text of ``cfg`` (includes already resolved); written if ``path`` given."""
    text = yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=True)
    if path is not None:
        Path(path).write_text(text)
    return text


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(text):
    val = yaml.safe_load(text)
    if isinstance(val, str):
        # YAML 1.1 reads "1e-4" as a string
        try:
            return float(val)
        except ValueError:
            return val
    return val


def apply_overrides(cfg, overrides):
    """Return a new config with ``key=value`` strings applied.

    Dotted keys address nested blocks (``greedy.tol=1e-4``,
    ``model_params.N=200``); values are parsed as YAML scalars.
    """
    d = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise InvalidInputError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        parts = key.strip().split(".")
        tgt = d
        for p in parts[:-1]:
            if p not in tgt or not isinstance(tgt[p], dict):
                raise InvalidInputError(f"override {key!r}: {p!r} is not a config block")
            tgt = tgt[p]
        if len(parts) == 1 and parts[0] not in d:
            raise InvalidInputError(f"override {key!r}: unknown config field")
        tgt[parts[-1]] = _coerce(val)
    return parse_config(d)


def build_model(cfg):
    params = dict(cfg.model_params)
    if cfg.model == "chromatography":
        coef = {k: params.pop(k) for k in list(params) if k not in
                ("N", "dt", "Q_domain", "tin_domain", "snapshot_stride", "theta")}
        if coef:
            full = asdict(ChromatographyCoefficients())
            full.update(coef)
            params["coefficients"] = full
    try:
        return MODELS[cfg.model](**params)
    except TypeError as exc:
        raise InvalidInputError(f"model_params: {exc}") from exc


def build_training(cfg, fom):
    if fom.domain.dim == 0:
        return TrainingSet.single(fom.domain)
    counts = cfg.training["counts"]
    if isinstance(counts, int):
        counts = [counts] * fom.domain.dim
    if len(counts) != fom.domain.dim:
        raise InvalidInputError(f"training.counts: need {fom.domain.dim} entries")
    return TrainingSet.grid(fom.domain, tuple(int(c) for c in counts),
                            log_axes=tuple(cfg.training.get("log_axes", ())))
