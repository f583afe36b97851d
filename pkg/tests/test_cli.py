import json

import pytest
import yaml

from entropic_lab.cli import main


@pytest.fixture
def interface_cfg(tmp_path):
    p = tmp_path / "interface.yaml"
    p.write_text(yaml.safe_dump({
        "model": "interface", "dimension": 2, "N": 3, "lambda": 0.1, "upsilon": 0.5, "seed": 4,
        "chain": {"sweeps": 400, "burn_in": 100, "observables": ["mean_height", "pinned_fraction"]},
    }))
    return p


def test_solve_h(capsys):
    assert main(["oracle", "solve-h", "--v", "linear", "--lambda", "0.5"]) == 0
    assert capsys.readouterr().out.strip() == "H=1"


def test_missing_config_exits_1(tmp_path):
    assert main(["run"]) == 1
    assert main(["run", "--config", str(tmp_path / "nope.yaml")]) == 1


def test_unknown_flag_exits_1(capsys):
    assert main(["run", "--frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_config_exits_1(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("model: interface\ndimension: 0\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 1


def test_numerical_failure_exits_2():
    assert main(["oracle", "transfer", "--lambda", "0"]) == 2


def test_run_is_byte_identical(tmp_path, interface_cfg):
    for k in (1, 2):
        assert main(["run", "--config", str(interface_cfg), "--out", str(tmp_path / f"r{k}")]) == 0
    for name in ("results.csv", "series.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    manifest = json.loads((tmp_path / "r1" / "manifest.json").read_text())
    assert manifest["seed"] == 4 and "versions" in manifest
    assert main(["run", "--config", str(interface_cfg), "--seed", "5", "--out", str(tmp_path / "r3")]) == 0
    assert (tmp_path / "r3" / "results.csv").read_bytes() != (tmp_path / "r1" / "results.csv").read_bytes()


def test_run_ising(tmp_path):
    p = tmp_path / "ising.json"
    p.write_text(json.dumps({"model": "ising", "beta": 0.6, "N": 8, "lambda": 0.2,
                             "chain": {"sweeps": 200, "burn_in": 20, "thinning": 2}}))
    assert main(["run", "--config", str(p), "--out", str(tmp_path)]) == 0
    header = (tmp_path / "results.csv").read_text().splitlines()[0]
    assert header.startswith("run_id,model,param_name,param_value,observable,mean,stderr,tau_int,n_samples")


def test_sweep_then_fit(tmp_path, capsys):
    plan = tmp_path / "plan.yaml"
    plan.write_text(yaml.safe_dump({
        "model": "oracle", "param": "lambda", "grid": [1e-4, 1e-3, 1e-2, 1e-1], "base": {},
        "run_id": "cli", "observables": ["mean_height"],
    }))
    assert main(["sweep", "--config", str(plan), "--out", str(tmp_path / "s")]) == 0
    capsys.readouterr()
    assert main(["fit", str(tmp_path / "s" / "results.csv"), "--axes", "log,log"]) == 0
    fit = json.loads(capsys.readouterr().out)
    assert -0.4 < fit["exponent"] < -0.3
    assert main(["fit", str(tmp_path / "s" / "results.csv"), "--axes", "log"]) == 1
    assert main(["fit", str(tmp_path / "s" / "results.csv"), "--observable", "nothing"]) == 1


def test_oracle_subcommands(tmp_path, capsys):
    assert main(["oracle", "transfer", "--lambda", "0.1"]) == 0
    assert capsys.readouterr().out.startswith("mean_height=")
    assert main(["oracle", "enumerate", "--N", "4", "--lambda", "0.1"]) == 0
    assert "lambda_minus=" in capsys.readouterr().out
    cfg = tmp_path / "one.yaml"
    cfg.write_text("dimension: 2\nN: 0\n")
    assert main(["oracle", "quadrature", "--config", str(cfg)]) == 0
    value = float(capsys.readouterr().out.split()[0].split("=")[1])
    assert value == pytest.approx(0.39894228, abs=1e-7)


def test_report_single_criterion(tmp_path, capsys):
    assert main(["report", "--criteria", "3", "--out", str(tmp_path)]) == 0
    assert "[PASS] criterion 3" in capsys.readouterr().out
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["3"]["passed"] is True
    assert main(["report", "--criteria", "12", "--out", str(tmp_path)]) == 1
