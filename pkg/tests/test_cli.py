import json
import math
import subprocess
import sys

import pytest

from perfhom.cli import run_cli

CONFIG = """
[domain]
grid_n = 41

[generator]
kind = "poisson"
marks = "ball:1.2"
intensity = 1.0

[study]
epsilons = [0.5, 0.4]
seeds = 3
"""


def _json(capsys):
    return json.loads(capsys.readouterr().out)


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "study.toml"
    path.write_text(CONFIG)
    return path


def test_cap_ball(capsys):
    assert run_cli(["cap", "--shape", "ball:1"]) == 0
    out = _json(capsys)
    assert out["value"] == pytest.approx(4 * math.pi)
    assert out["method"] == "analytic"
    assert out["alpha_ratio"] == pytest.approx(2 * math.pi)


def test_cap_relative(capsys):
    assert run_cli(["cap", "--shape", "ball:1", "--R", "2", "--analytic"]) == 0
    assert _json(capsys)["value"] == pytest.approx(8 * math.pi)
    assert run_cli(["cap", "--shape", "box:0.5,0.5,0.5", "--R", "2", "--n", "33"]) == 0
    assert _json(capsys)["method"] == "grid"


def test_sample_thin_decompose(tmp_path, capsys):
    real = tmp_path / "real.json"
    assert run_cli(["sample", "--kind", "poisson", "--intensity", "2", "--window", "0,4", "--seed", "3",
                    "--out", str(real)]) == 0
    n = len(json.loads(real.read_text())["points"])
    assert n > 0
    assert run_cli(["thin", "--in", str(real), "--delta", "0.3"]) == 0
    out = _json(capsys)
    assert out["n_close"] + out["n_far"] == n
    close = json.loads((tmp_path / "real.close.json").read_text())["points"]
    far = json.loads((tmp_path / "real.far.json").read_text())["points"]
    assert len(close) == out["n_close"] and len(far) == out["n_far"]
    assert run_cli(["decompose", "--in", str(real), "--epsilon", "0.5"]) == 0
    dec = _json(capsys)
    assert dec["n_I_g"] + dec["n_I_b"] == dec["n_window"]
    assert run_cli(["decompose", "--in", str(real), "--diagnostics", "0.5,0.25"]) == 0
    rows = _json(capsys)["rows"]
    assert len(rows) == 2 and all(r["partition"] for r in rows)


def test_sample_index_uses_stream_seed(tmp_path, capsys):
    from perfhom.mpp import mix64
    assert run_cli(["sample", "--kind", "lattice", "--spacing", "1", "--window", "0,2", "--seed", "5",
                    "--index", "2"]) == 0
    assert _json(capsys)["seed"] == mix64(5, 2)


def test_pipeline_commands(config, tmp_path, capsys):
    assert run_cli(["solve", "--config", str(config), "--fields", str(tmp_path / "f")]) == 0
    out = _json(capsys)
    assert out["epsilon"] == 0.5 and out["l2_err"] < out["l2_err_c0_zero"]
    assert (tmp_path / "f" / "u_eps.bin").exists()
    assert run_cli(["corrector", "--config", str(config), "--epsilon", "0.4"]) == 0
    assert _json(capsys)["corr_ratio"] < 1
    assert run_cli(["heat", "--config", str(config), "--t", "0.01", "--dt", "0.005", "--compare-zero"]) == 0
    out = _json(capsys)
    assert out["heat_err"] < out["heat_err_c0_zero"]


def test_exit_codes(config, tmp_path):
    assert run_cli([]) == 2
    assert run_cli(["cap"]) == 2
    assert run_cli(["cap", "--shape", "cone:1"]) == 2
    assert run_cli(["cap", "--shape", "ball:1", "--R", "0.5", "--analytic"]) == 1
    assert run_cli(["solve", "--config", str(config), "--epsilon", "0.3"]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text(CONFIG.replace("alpha", "x") + "\n[study2]\n")
    assert run_cli(["study", "--config", str(bad)]) == 2
    coarse = tmp_path / "coarse.toml"
    coarse.write_text(CONFIG.replace("grid_n = 41", "grid_n = 33").replace("ball:1.2", "ball:0.3"))
    assert run_cli(["solve", "--config", str(coarse), "--epsilon", "0.4"]) == 1
    assert run_cli(["thin", "--in", str(tmp_path / "missing.json"), "--delta", "1"]) == 2


def test_study_deterministic_across_workers(config, tmp_path, monkeypatch, capsys):
    assert run_cli(["study", "--config", str(config), "--workers", "1", "--out", str(tmp_path / "a")]) == 0
    assert run_cli(["study", "--config", str(config), "--workers", "4", "--out", str(tmp_path / "b")]) == 0
    monkeypatch.setenv("PERFHOM_WORKERS", "2")
    assert run_cli(["study", "--config", str(config), "--workers", "1", "--out", str(tmp_path / "c")]) == 0
    a = (tmp_path / "a" / "study.csv").read_bytes()
    assert a == (tmp_path / "b" / "study.csv").read_bytes() == (tmp_path / "c" / "study.csv").read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["config_hash"] == mb["config_hash"]
    assert len(a.decode().splitlines()) == 7
    monkeypatch.setenv("PERFHOM_WORKERS", "zero")
    assert run_cli(["study", "--config", str(config)]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "perfhom", "cap", "--shape", "ball:2"], capture_output=True,
                          text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["value"] == pytest.approx(8 * math.pi)
    proc = subprocess.run([sys.executable, "-m", "perfhom", "frobnicate"], capture_output=True, text=True,
                          check=False)
    assert proc.returncode == 2
