import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from adaptive_mor.cli import main
from adaptive_mor.config import (
    ExperimentConfig,
    apply_overrides,
    build_model,
    dump_config,
    load_config,
    parse_config,
)
from adaptive_mor.errors import InvalidInputError
from adaptive_mor.fom_models import simulate_fom
from adaptive_mor.greedy import ITERATION_COLUMNS
from adaptive_mor.io import read_matrix, read_rows_csv, write_matrix
from adaptive_mor.reduction import simulate_rom
from adaptive_mor.runner import (
    compare_runs,
    load_rom,
    load_summary,
    run_experiment,
    validate_iteration_csv,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_BURGERS = {"N": 60, "dt": 2e-3, "T": 1.0, "snapshot_stride": 10}


def small_cfg(tmp_path, pipeline="adaptive-greedy", name="run", **greedy):
    g = {"tol": 1e-3, "method": "DEIM", "max_iter": 25, "seed": 4}
    g.update(greedy)
    return parse_config({
        "name": name, "model": "burgers", "model_params": dict(SMALL_BURGERS),
        "training": {"counts": [8], "log_axes": [0]}, "pipeline": pipeline, "greedy": g,
        "output_dir": str(tmp_path / name),
    })


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_roundtrip(path, tmp_path):
    cfg = load_config(path)
    text = dump_config(cfg)
    again = parse_config(yaml.safe_load(text))
    assert again == cfg
    assert dump_config(again) == text


def test_include_merges_and_inline_wins(tmp_path):
    (tmp_path / "m.yaml").write_text("N: 40\ndt: 1.0e-3\n")
    (tmp_path / "e.yaml").write_text(
        "model: burgers\nmodel_params: {include: m.yaml, N: 50}\n")
    cfg = load_config(tmp_path / "e.yaml")
    assert cfg.model_params == {"N": 50, "dt": 1e-3}


def test_include_cycle_detected(tmp_path):
    (tmp_path / "a.yaml").write_text("include: b.yaml\n")
    (tmp_path / "b.yaml").write_text("include: a.yaml\n")
    (tmp_path / "e.yaml").write_text("model_params: {include: a.yaml}\n")
    with pytest.raises(InvalidInputError, match="cycle"):
        load_config(tmp_path / "e.yaml")


@pytest.mark.parametrize("data,field", [
    ({"model": "nope"}, "model"),
    ({"pipeline": "nope"}, "pipeline"),
    ({"greedy": {"tolerance": 1}}, "greedy"),
    ({"greedy": {"tol": -1.0}}, "greedy"),
    ({"training": {}}, "training"),
    ({"colour": 1}, "colour"),
])
def test_invalid_config_names_field(data, field):
    with pytest.raises(InvalidInputError, match=field):
        parse_config(data)


def test_bad_model_parameter_names_field():
    with pytest.raises(InvalidInputError, match="model_params"):
        build_model(parse_config({"model": "burgers", "model_params": {"M": 3}}))


def test_overrides():
    cfg = apply_overrides(ExperimentConfig(), ["greedy.tol=1e-4", "model_params.N=80", "seed=3"])
    assert cfg.greedy["tol"] == 1e-4 and cfg.model_params["N"] == 80 and cfg.seed == 3
    with pytest.raises(InvalidInputError):
        apply_overrides(ExperimentConfig(), ["bogus=1"])


def test_chromatography_partial_coefficients():
    cfg = parse_config({"model": "chromatography", "model_params": {"N": 48, "porosity": 0.5}})
    fom = build_model(cfg)
    assert fom.N == 48


def test_matrix_container_roundtrip(tmp_path):
    M = np.random.default_rng(0).standard_normal((5, 3))
    write_matrix(tmp_path / "m.bin", M)
    np.testing.assert_array_equal(read_matrix(tmp_path / "m.bin"), M)
    (tmp_path / "bad.bin").write_bytes(b"nonsense" * 4)
    with pytest.raises(InvalidInputError):
        read_matrix(tmp_path / "bad.bin")


@pytest.fixture(scope="module")
def adaptive_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("runs")
    cfg = small_cfg(tmp)
    return cfg, run_experiment(cfg)


def test_run_writes_schema_valid_artifacts(adaptive_run):
    cfg, summary = adaptive_run
    out = Path(cfg.output_dir)
    for f in summary.files.values():
        assert (out / f).exists()
    rows = validate_iteration_csv(out / "iterations.csv")
    assert len(rows) == summary.iterations
    loaded = load_summary(out)
    assert loaded.schema_version == 1 and loaded.sizes == summary.sizes


def test_schema_validator_rejects_bad_header(tmp_path):
    (tmp_path / "x.csv").write_text("iteration,foo\n1,2\n")
    with pytest.raises(InvalidInputError):
        validate_iteration_csv(tmp_path / "x.csv")


def test_manifest_reloads_rom(adaptive_run):
    cfg, summary = adaptive_run
    fom, rom = load_rom(cfg.output_dir)
    assert rom.dims[1:] == summary.sizes
    mu = np.array([0.05])
    rt = simulate_rom(rom, mu)
    y = simulate_fom(fom, mu).snapshot_outputs
    assert np.mean(np.abs(rt.snapshot_outputs - y)) < 10 * cfg.greedy["tol"]


def test_same_seed_byte_identical_csv(adaptive_run, tmp_path):
    cfg, _ = adaptive_run
    again = apply_overrides(cfg, [f"output_dir={tmp_path / 'again'}"])
    run_experiment(again)

    def strip(path):
        rows = read_rows_csv(path)
        return [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]

    assert strip(Path(cfg.output_dir) / "iterations.csv") == strip(tmp_path / "again" / "iterations.csv")


def test_compare_identical_runs_zero_deltas(adaptive_run, tmp_path):
    cfg, summary = adaptive_run
    table, overlay = compare_runs([summary, summary], tmp_path / "cmp")
    assert table[1]["d_iterations"] == 0 and table[1]["d_ell_rb"] == 0 and table[1]["d_ell_ei"] == 0
    assert (tmp_path / "cmp" / "overlay.csv").exists()
    assert {"eff_original", "eff_modified"} <= set(overlay[0])


def test_compare_refuses_mismatched_models(adaptive_run, tmp_path):
    cfg, summary = adaptive_run
    other = load_summary(cfg.output_dir)
    other.model_params = dict(other.model_params, N=70)
    with pytest.raises(InvalidInputError):
        compare_runs([summary, other])
    with pytest.raises(InvalidInputError):
        compare_runs([summary])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_failure_recorded_in_summary(tmp_path):
    cfg = parse_config({"model": "burgers", "model_params": {"N": 30, "dt": 50.0, "T": 1000.0},
                        "training": {"counts": [2]}, "pipeline": "fom-sim",
                        "output_dir": str(tmp_path / "f")})
    summary = run_experiment(cfg)
    assert summary.cause == "failed" and summary.error
    assert json.loads((tmp_path / "f" / "summary.json").read_text())["cause"] == "failed"


def test_cli_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text(dump_config(small_cfg(tmp_path, name="cli")))
    assert main(["adaptive", str(cfg_path), "--output-dir", str(tmp_path / "a")]) == 0
    assert main(["adaptive", str(cfg_path), "--output-dir", str(tmp_path / "b"),
                 "--max-iter", "1", "--tol", "1e-9"]) == 1
    assert main(["adaptive", str(cfg_path), "--set", "greedy.method=POD"]) == 2
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b"),
                 "--output-dir", str(tmp_path / "cmp")]) == 0
    assert (tmp_path / "cmp" / "comparison.csv").exists()


def test_cli_fom_sim_and_infsup(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(small_cfg(tmp_path, name="x")))
    assert main(["fom-sim", str(p), "--output-dir", str(tmp_path / "f"),
                 "--set", "training.counts=[2]"]) == 0
    rows = read_rows_csv(tmp_path / "f" / "fom_outputs.csv")
    assert len(rows) == 2 * 500
    assert main(["infsup", str(p), "--output-dir", str(tmp_path / "i")]) == 0
    s = load_summary(tmp_path / "i")
    assert s.extras["max_rel_error"] < 0.05


def test_iteration_columns_documented():
    doc = (Path(__file__).resolve().parent.parent / "docs" / "formats.md").read_text()
    for col in ITERATION_COLUMNS:
        assert f"`{col}`" in doc


def test_run_experiments_script_compares_runs(tmp_path):
    import subprocess
    import sys
    from pathlib import Path
    root = Path(__file__).resolve().parents[1]
    out = subprocess.run(
        [sys.executable, str(root / "scripts" / "run_experiments.py"),
         str(root / "configs" / "rd_twoway_increase.yaml"),
         str(root / "configs" / "rd_twoway_decrease.yaml"), "--output-root", str(tmp_path)],
        capture_output=True, text=True, check=True)
    assert "rd-twoway-increase" in out.stdout
    assert (tmp_path / "compare_synthetic_rd" / "comparison.csv").exists()
