import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from platoon_perl import cli
from platoon_perl.config import ConfigError, HarnessConfig, load_config

SINGLE = ["run", "--scenario", "variable", "--error", "affine", "--controller", "mpc_q",
          "--seed", "7"]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def single_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("single")
    assert cli.main(SINGLE + ["--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def matrix_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("matrix")
    assert cli.main(["run", "--matrix", "paper", "--seed", "0", "--out", str(out)]) == 0
    return out


def test_trajectory_shape_and_columns(single_run):
    path = single_run / "variable_affine_mpc_q_seed7" / "trajectory.csv"
    text = path.read_text()
    assert text.splitlines()[0] == ",".join(cli.TRAJECTORY_COLUMNS)
    rows = read_rows(path)
    assert len(rows) == 750
    for i in range(5):
        assert sum(r["vehicle"] == str(i) for r in rows) == 150
    assert rows[-1]["time"] == "14.9"


def test_rerun_is_byte_identical(single_run, tmp_path):
    assert cli.main(SINGLE + ["--out", str(tmp_path)]) == 0
    for name in ("trajectory.csv", "metrics.csv", "events.csv"):
        a = (single_run / "variable_affine_mpc_q_seed7" / name).read_bytes()
        b = (tmp_path / "variable_affine_mpc_q_seed7" / name).read_bytes()
        assert a == b
    assert (single_run / "table.csv").read_bytes() == (tmp_path / "table.csv").read_bytes()


def test_config_round_trip(single_run, tmp_path):
    assert cli.main(["run", "--config", str(single_run / "config.json"), "--out", str(tmp_path)]) == 0
    cell = "variable_affine_mpc_q_seed7/trajectory.csv"
    assert (single_run / cell).read_bytes() == (tmp_path / cell).read_bytes()
    m1 = json.loads((single_run / "manifest.json").read_text())
    m2 = json.loads((tmp_path / "manifest.json").read_text())
    assert m1["config_hash"] == m2["config_hash"]


def test_manifest_lists_every_file(single_run):
    manifest = json.loads((single_run / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["seeds"] == [7]
    assert {"python", "numpy", "scipy"} <= set(manifest["versions"])
    on_disk = {str(p.relative_to(single_run)) for p in single_run.rglob("*")
               if p.is_file() and p.name != "manifest.json" and not p.name.startswith("fig_")}
    assert on_disk == set(manifest["files"])
    for rel, digest in manifest["files"].items():
        assert hashlib.sha256((single_run / rel).read_bytes()).hexdigest() == digest


def test_matrix_runs_twelve_cells(matrix_run):
    rows = read_rows(matrix_run / "table.csv")
    assert len(rows) == 12
    cells = {(r["scenario"], r["error_kind"], r["controller"]) for r in rows}
    assert len(cells) == 12
    assert {r["error_kind"] for r in rows} == {"affine", "quadratic"}
    for r in rows:
        if r["controller"] == "mpc_q":
            assert float(r["gap_cae_p"]) == 0.0


def test_export_plot_data(matrix_run):
    ts_path, ve_path = cli.export_plot_data(matrix_run)
    ve = read_rows(ve_path)
    ts = read_rows(ts_path)
    assert {r["controller"] for r in ve} == {"mpc_only", "mpc_nn", "mpc_q"}
    # leader reference slope changes sign around the trough at 7.5 s
    lead = [r for r in ts if r["scenario"] == "variable" and r["error_kind"] == "affine"
            and r["controller"] == "mpc_only" and r["vehicle"] == "0"]
    t = np.array([float(r["time"]) for r in lead])
    p = np.array([float(r["p_ref"]) for r in lead])
    slope = np.diff(p) / np.diff(t)
    trough = t[np.argmin(slope)]
    assert 7.0 <= trough <= 8.0
    assert slope[:20].mean() > slope[np.argmin(slope)] < slope[-20:].mean()

    def series(ctrl):
        return np.array([float(r["v_err_mean"]) for r in ve if r["scenario"] == "uniform"
                         and r["error_kind"] == "affine" and r["controller"] == ctrl])
    m_only, m_q = series("mpc_only"), series("mpc_q")
    assert not np.array_equal(m_only, m_q)
    assert m_only[-50:].mean() > 0.02
    assert abs(m_q[-20:].mean()) < m_only[-20:].mean()


def test_export_empty_dir(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest.json"):
        cli.export_plot_data(tmp_path)
    assert cli.main(["export-plots", str(tmp_path)]) == 2


def test_export_lists_missing_files(single_run, tmp_path):
    import shutil
    copy = tmp_path / "copy"
    shutil.copytree(single_run, copy)
    (copy / "variable_affine_mpc_q_seed7" / "trajectory.csv").unlink()
    (copy / "table.csv").unlink()
    with pytest.raises(FileNotFoundError) as exc:
        cli.export_plot_data(copy)
    assert "trajectory.csv" in str(exc.value) and "table.csv" in str(exc.value)


def write(tmp_path, text):
    path = tmp_path / "cfg.json"
    path.write_text(text)
    return path


def test_config_syntax_error_line(tmp_path):
    path = write(tmp_path, '{\n  "error_kind": "affine",\n  "seeds": [1,,2]\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.line == 3


def test_config_unknown_key_line(tmp_path):
    path = write(tmp_path, '{\n  "mpc": {\n    "horizon": 10,\n    "q9": 1.0\n  }\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.line == 4 and "q9" in str(exc.value)


def test_config_invalid_value_line(tmp_path):
    path = write(tmp_path, '{\n  "scenario": {"kind": "variable"},\n  "mpc": {\n    "horizon": 0\n  }\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.line == 4


def test_config_empty_seed_list(tmp_path):
    path = write(tmp_path, '{\n  "seeds": []\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.line == 2


def test_config_cross_field_error_line(tmp_path):
    path = write(tmp_path, '{\n  "scenario": {\n    "initial_spacing": 40.0\n  }\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.line == 3 and exc.value.key == "initial_spacing"


def test_config_error_exit_code(tmp_path, capsys):
    path = write(tmp_path, '{\n  "error_kind": "cubic"\n}\n')
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert f"{path}:2:" in err


def test_flags_override_file(tmp_path):
    path = write(tmp_path, '{"error_kind": "quadratic", "seeds": [3], "controllers": ["mpc_only"]}')
    args = cli.build_parser().parse_args(["run", "--config", str(path), "--error", "affine",
                                          "--out", str(tmp_path / "o")])
    cfg = cli.effective_config(args)
    assert cfg.error_kind == "affine" and cfg.seeds == [3] and cfg.controllers == ["mpc_only"]


def test_env_var_sets_default_out(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    args = cli.build_parser().parse_args(["run", "--seed", "1"])
    assert cli.effective_config(args).out_dir == str(tmp_path / "envout")


def test_config_json_roundtrip():
    cfg = HarnessConfig()
    cfg.out_dir = "x"
    from platoon_perl.config import from_dict
    back = from_dict(json.loads(cfg.to_json()))
    assert back.to_json() == cfg.to_json()


def test_mid_run_failure_keeps_partial_artifacts(tmp_path, monkeypatch):
    real = cli.run_experiment

    def flaky(spec, controller, *a, **kw):
        if controller == "mpc_nn":
            raise RuntimeError("solver exploded")
        return real(spec, controller, *a, **kw)

    monkeypatch.setattr(cli, "run_experiment", flaky)
    code = cli.main(["run", "--controller", "mpc_only", "--controller", "mpc_nn",
                     "--seed", "0", "--out", str(tmp_path)])
    assert code == 2
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert manifest["failures"][0]["cell"] == "uniform_none_mpc_nn_seed0"
    assert "solver exploded" in manifest["failures"][0]["error"]
    assert (tmp_path / "uniform_none_mpc_only_seed0" / "trajectory.csv").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "platoon_perl.cli", "run", "--controller",
                           "mpc_only", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "uniform_none_mpc_only_seed0" / "trajectory.csv").exists()
