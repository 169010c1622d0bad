import json
import subprocess
import sys

import pytest

from saflab.cli import main

RUN = ["--filter-len", "16", "--n-subbands", "2", "--trials", "2", "--iters", "300", "--seed", "4"]


def test_help(capsys):
    assert main(["--help"]) == 0
    assert "simulate" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["simulate", "--bogus"],
    ["frobnicate"],
    [],
    ["simulate", "--mu", "-1"],
    ["simulate", "--algo", "lms"],
    ["theory", "--l", "4"],
    ["theory", "--h-norm-sq", "0"],
    ["sweep", "--mus", "a,b"],
])
def test_invalid_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_theory_bound(capsys):
    assert main(["theory", "--l", "128", "--h-norm-sq", "1", "--theta", "1"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["report"]["ms_bound"] == 4.0
    assert "hessian_at_h" not in data["report"]


def test_theory_with_step(tmp_path, capsys):
    assert main(["theory", "--l", "16", "--mu", "0.2", "--matrices", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "theory.json").read_text())
    assert data["report"]["predicted_nmsd_db"] < 0
    assert len(data["report"]["moment_M"]) == 16
    assert data["config_hash"]


def test_theory_unstable_exit_1(capsys):
    assert main(["theory", "--l", "16", "--mu", "1000"]) == 1


def test_simulate_outputs_byte_identical(tmp_path, monkeypatch):
    monkeypatch.setenv("SAFLAB_THREADS", "1")
    for cwd in ("a", "b"):
        (tmp_path / cwd).mkdir()
        monkeypatch.chdir(tmp_path / cwd)
        assert main(["simulate", *RUN, "--algo", "tlmm_nsaf,nsaf", "--plot", "--out", "out"]) == 0
    a, b = tmp_path / "a" / "out", tmp_path / "b" / "out"
    for name in ("nmsd.csv", "summary.json", "nmsd.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    digest = summary["config_hash"]
    assert (a / "nmsd.csv").read_text().splitlines()[0] == f"# config_sha256={digest}"
    assert (a / "nmsd.csv").read_text().splitlines()[1] == "iter,tlmm_nsaf,nsaf"
    assert digest.encode() in (a / "nmsd.svg").read_bytes()
    assert summary["config"]["filter_len"] == 16


def test_config_file_and_override(tmp_path, monkeypatch):
    monkeypatch.setenv("SAFLAB_THREADS", "1")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"filter_len": 16, "n_subbands": 2, "trials": 1, "iters": 200, "mu": 0.3}))
    assert main(["simulate", "--config", str(cfg), "--mu", "0.2", "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["config"]["mu"] == 0.2
    assert summary["config"]["iters"] == 200
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["simulate", "--config", str(cfg)]) == 2


def test_missing_config_exit_1(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.json")]) == 1


def test_all_diverged_exit_1(tmp_path, monkeypatch):
    monkeypatch.setenv("SAFLAB_THREADS", "1")
    argv = ["simulate", *RUN, "--iters", "3000", "--trials", "1", "--mu", "4.5", "--out", str(tmp_path)]
    with pytest.warns(Warning):
        assert main(argv) == 1


def test_aec_writes_residuals(tmp_path, monkeypatch):
    monkeypatch.setenv("SAFLAB_THREADS", "1")
    argv = ["aec", *RUN, "--trials", "1", "--mu", "0.05", "--algo", "tlmm_nsaf", "--out", str(tmp_path)]
    assert main(argv) == 0
    from saflab.signals import load_wav

    assert load_wav(tmp_path / "residual_tlmm_nsaf.wav").size == 600


def test_sweep(tmp_path, monkeypatch):
    monkeypatch.setenv("SAFLAB_THREADS", "1")
    argv = ["sweep", *RUN, "--iters", "1000", "--mus", "0.1,80", "--variances", "0.05", "--out", str(tmp_path)]
    assert main(argv) == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[1] == "mu,sigma2,predicted_db,simulated_db,gap_db,status"
    assert lines[2].endswith(",ok") and lines[3].endswith(",unstable")


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "saflab.cli", "theory", "--l", "128"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["report"]["ms_bound"] == 4.0
