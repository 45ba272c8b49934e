import json
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from qbatt.engine import TrajectoryRecord
from qbatt.errors import ConfigError, FileError, InsufficientDataError
from qbatt.runner import config_from_dict, default_params, load_config, run_scenario
from qbatt.runner.cli import main
from qbatt.runner.config import SCENARIOS, SWEEP_AXES
from qbatt.runner.output import csv_text, emit_csv, emit_svg, fmt, svg_text
from qbatt.runner.scenarios import SweepTable, apply_axis, run_sweep, worker_count


def tiny(scenario="charge-single-cell", **model):
    """A quick single-cell run: small cutoff, short horizon."""
    cfg = default_params(scenario)
    model = {"n_photons": 1, "cutoff": 3, **model}
    doc = cfg.to_dict()
    doc["model"].update(model)
    doc["integrator"].update({"t_end": 2.0})
    doc["steady"].update({"window": 1.0})
    return config_from_dict(doc)


def record(n=5):
    rec = TrajectoryRecord()
    for i in range(n):
        rec.append(0.1 * i, {"delta_E": 0.5, "P": 0.1 * i, "C": 0.0, "S": 0.0},
                   {"trace_err": 0.0, "herm_err": 0.0, "min_eig": 0.0})
    return rec


def write_json(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


# defaults and config


def test_default_parameter_sets():
    c = default_params("charge-resonator-qutrits").model
    assert (c.N, c.g, c.J, c.omega_levels, c.n_photons) == (3, [1.0], 1.0, (0, 1, 1.95), 6)
    s = default_params("charge-single-cell").model
    assert (s.N, s.J, s.g) == (1, 0.0, [1.0])
    d = default_params("self-discharge").model
    assert d.kappa == 0.1 and d.gamma_rel == (0.1, 0.2)
    drive = default_params("charge-qutrit-drive")
    assert drive.drive.Omega_0 == 0.25 and drive.drive.tau == 160.0
    with pytest.raises(ConfigError):
        default_params("no-such-scenario")


@pytest.mark.parametrize("kind", SCENARIOS)
def test_config_round_trip(kind):
    cfg = default_params(kind)
    assert config_from_dict(json.loads(cfg.to_json())).to_json() == cfg.to_json()


@pytest.mark.parametrize(
    "doc,where",
    [
        ({"scenario": "charge-single-cell", "gamma_01": 0.1}, "gamma_01"),
        ({"model": {"gamma_01": 0.1}}, "model.gamma_01"),
        ({"integrator": {"step": 0.1}}, "integrator.step"),
        ({"scenario": "nope"}, "scenario"),
        ({"model": {"N": 0}}, "model"),
        ({"model": {"kappa": -1}}, "model"),
        ({"integrator": {"method": "euler"}}, "integrator"),
        ({"emit_svg": "yes"}, "emit_svg"),
        ({"scenario": "rate-sweep", "sweep": {"values": []}}, "sweep.values"),
        ({"scenario": "rate-sweep", "sweep": {"axis": "omega"}}, "sweep.axis"),
        ({"model": [1, 2]}, "model"),
    ],
)
def test_config_errors_name_the_field(doc, where):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(doc)
    assert where in str(exc.value)


def test_config_overrides_and_mode_change():
    cfg = config_from_dict({"scenario": "charge-single-cell", "model": {"modes": 2}})
    assert cfg.model.omega_r == [1.0, 2.0] and cfg.model.g == [1.0, 1.0]
    cfg = config_from_dict({"model": {"N": 2, "n_photons": 4}})
    assert cfg.model.cutoff == 8


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)


# sweep plumbing


def test_apply_axis():
    base = default_params("charge-resonator-qutrits")
    assert apply_axis(base, "gamma01", 0.05).model.gamma_rel == (0.05, 0.1)
    assert apply_axis(base, "gamma01", 0.05, tie_rates=False).model.gamma_rel == (0.05, 0.2)
    assert apply_axis(base, "gamma11", 0.3).model.gamma_dep == (0.3, 0.6)
    assert apply_axis(base, "kappa", 0.0).model.kappa == 0.0
    n2 = apply_axis(base, "N", 2).model
    assert (n2.N, n2.n_photons, n2.cutoff) == (2, 4, 8)
    levels = apply_axis(base, "gap_ratio", 1.5).model.omega_levels
    assert (levels[1] - levels[0]) / (levels[2] - levels[1]) == pytest.approx(1.5)
    assert base.model.gamma_rel == (0.1, 0.2)  # input untouched
    with pytest.raises(ConfigError):
        apply_axis(base, "cutoff", 7.5)
    assert set(SWEEP_AXES) >= {"kappa", "gamma01", "gamma11", "gap_ratio"}


def test_worker_count(monkeypatch):
    monkeypatch.setenv("QBATT_THREADS", "2")
    assert worker_count(5) == 2
    assert worker_count(1) == 1
    monkeypatch.setenv("QBATT_THREADS", "0")
    with pytest.raises(ConfigError):
        worker_count(3)
    monkeypatch.setenv("QBATT_THREADS", "many")
    with pytest.raises(ConfigError):
        worker_count(3)


def sweep_cfg():
    cfg = tiny(kappa=0.2)
    cfg.scenario = "rate-sweep"
    doc = cfg.to_dict()
    doc["sweep"] = {"axis": "gamma01", "values": [0.2, 0.0, 0.1],
                    "base": "charge-single-cell"}
    return config_from_dict(doc)


def test_sweep_order_and_parallel_merge(monkeypatch):
    monkeypatch.setenv("QBATT_THREADS", "1")
    serial = run_sweep(sweep_cfg()).table
    monkeypatch.setenv("QBATT_THREADS", "3")
    parallel = run_sweep(sweep_cfg()).table
    assert serial.values == [0.0, 0.1, 0.2]
    np.testing.assert_array_equal(np.array(serial.rows(), dtype=float),
                                  np.array(parallel.rows(), dtype=float))
    assert csv_text(serial) == csv_text(parallel)


def test_cutoff_guard():
    cfg = tiny(kappa=0.5, g=[0.2], n_photons=0, cutoff=2)
    cfg.integrator.t_end = 20.0
    cfg.steady.window = 5.0
    cfg.convergence.cutoff_guard = True
    cfg.convergence.tol = 1e-3
    cfg.convergence.step = 1
    res = run_scenario(cfg)
    cutoffs = [c for c, _ in res.cutoff_history]
    assert cutoffs[0] == 2 and len(cutoffs) >= 2
    e = [v for _, v in res.cutoff_history]
    assert abs(e[-1] - e[-2]) < 1e-3
    assert res.config.model.cutoff == cutoffs[-1]


def test_cutoff_guard_cap_flags():
    cfg = tiny()
    cfg.convergence.cutoff_guard = True
    cfg.convergence.tol = 1e-15
    cfg.convergence.step = 1
    cfg.convergence.max_cutoff = 4
    res = run_scenario(cfg)
    assert [c for c, _ in res.cutoff_history] == [3, 4]
    assert any("not converged" in f for f in res.record.flags)


# CSV and SVG


def test_fmt():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(1) == "1"
    assert fmt(float("nan")) == "nan"
    assert fmt(-float("inf")) == "-inf"
    assert float(fmt(np.pi)) == np.pi


def test_csv_layout():
    text = csv_text(record(5), {"b": 1, "a": [1, 2]})
    lines = text.split("\n")
    assert lines[0].startswith("# qbatt ")
    assert lines[1] == '# config: {"a":[1,2],"b":1}'
    assert lines[2] == "t,delta_E,P,C,S,trace_err,min_eig"
    data = [ln for ln in lines if ln and not ln.startswith("#")]
    assert len(data) == 5 + 1
    assert "\r" not in text


def test_sweep_csv_columns():
    t = SweepTable("gamma01", [0.1, 0.2], [1.0, 0.9], [0.3, 0.2], [5.0, float("nan")])
    assert csv_text(t).split("\n")[1] == "axis,E_s,P_max,t_steady"
    t.E_d = [0.5, 0.6]
    assert csv_text(t, {}).split("\n")[2] == "axis,E_s,P_max,t_steady,E_d"


def test_emit_csv_errors(tmp_path):
    target = tmp_path / "empty.csv"
    with pytest.raises(InsufficientDataError):
        emit_csv(TrajectoryRecord(), target)
    assert not target.exists()
    (tmp_path / "blocker").write_text("x")
    with pytest.raises(FileError):
        emit_csv(record(), tmp_path / "blocker" / "out.csv")


def test_svg_contents(tmp_path):
    cfg = {"scenario": "x"}
    path = emit_svg(record(), tmp_path / "r.svg", cfg, title="run")
    text = path.read_text(encoding="utf-8")
    root = ET.fromstring(text.split("\n", 1)[1])
    ns = "{http://www.w3.org/2000/svg}"
    assert json.loads(root.find(f"{ns}metadata").text) == cfg
    assert "ħω²" in text and "Energy (ħω)" in text
    paths = root.findall(f"{ns}path")
    assert len(paths) == 4  # delta_E, P, C, S
    # delta_E is constant: every point of its path shares one y
    ys = {p.split(",")[1] for p in re.findall(r"[\d.]+,[\d.]+", paths[0].get("d"))}
    assert len(ys) == 1
    assert {p.find(f"{ns}title").text for p in paths[2:]} == {"C", "S"}


def test_svg_needs_two_samples():
    with pytest.raises(InsufficientDataError):
        svg_text(record(1))


# command line


def test_cli_defaults(capsys):
    assert main(["defaults", "--scenario", "self-discharge"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["model"]["kappa"] == 0.1
    assert main(["defaults", "--scenario", "unknown"]) == 1


def test_cli_simulate_writes_outputs(tmp_path, capsys):
    cfg = tiny().to_dict()
    path = write_json(tmp_path / "c.json", cfg)
    out = tmp_path / "out"
    assert main(["simulate", "--config", path, "--out", str(out), "--svg"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["charge-single-cell.csv", "charge-single-cell.svg"]
    first = (out / "charge-single-cell.csv").read_bytes()
    assert main(["simulate", "--config", path, "--out", str(out), "--svg"]) == 0
    assert (out / "charge-single-cell.csv").read_bytes() == first
    assert b"\r\n" not in first
    assert "E_s=" in capsys.readouterr().out


def test_cli_config_errors(tmp_path, capsys):
    path = write_json(tmp_path / "c.json", {"model": {"gamma_01": 1}})
    assert main(["simulate", "--config", path]) == 1
    assert "model.gamma_01" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "none.json")]) == 1
    good = write_json(tmp_path / "g.json", tiny().to_dict())
    assert main(["sweep", "--config", good, "--axis", "kappa", "--values", "a,b"]) == 1
    assert main(["sweep", "--config", good, "--axis", "kappa", "--values", ","]) == 1


def test_cli_integration_failure(tmp_path, capsys):
    doc = tiny().to_dict()
    doc["integrator"]["min_step"] = 1.0
    doc["integrator"]["t_end"] = 1.0
    doc["output_dir"] = str(tmp_path / "o")
    path = write_json(tmp_path / "c.json", doc)
    assert main(["simulate", "--config", path]) == 2
    partial = tmp_path / "o" / "charge-single-cell_partial.csv"
    assert partial.exists()
    assert '"failed":true' in partial.read_text(encoding="utf-8")


def test_cli_sweep(tmp_path, monkeypatch):
    monkeypatch.setenv("QBATT_THREADS", "1")
    path = write_json(tmp_path / "c.json", tiny(kappa=0.2).to_dict())
    out = tmp_path / "s"
    code = main(["sweep", "--config", path, "--axis", "gamma01", "--values", "0.1,0",
                 "--out", str(out)])
    assert code == 0
    lines = (out / "rate-sweep_sweep.csv").read_text().splitlines()
    assert lines[2] == "axis,E_s,P_max,t_steady"
    assert [ln.split(",")[0] for ln in lines[3:]] == ["0", "0.10000000000000001"]


def test_cli_validate_exit_codes(monkeypatch):
    from qbatt.runner import validation
    from qbatt.runner.validation import CheckResult

    monkeypatch.setattr(validation, "run_suite",
                        lambda fast, stream: [CheckResult(1, "x", True, "")])
    assert main(["validate", "--fast"]) == 0
    monkeypatch.setattr(validation, "run_suite",
                        lambda fast, stream: [CheckResult(1, "x", False, "")])
    assert main(["validate"]) == 3


def test_cli_module_entry(tmp_path):
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "qbatt.runner.cli", "defaults",
                           "--scenario", "charge-single-cell"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["scenario"] == "charge-single-cell"
