import json
import subprocess
import sys

import numpy as np
import pytest

from fragtree import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_roots_phase(capsys):
    code, out, _ = run(capsys, "roots", "--law", "mary:27")
    assert code == 0
    d = json.loads(out)
    assert d["phase"]["phase"] == "Periodic"
    assert d["law_hash"] and d["config_hash"] and d["seeds"] == [0]


def test_analyze_binary(capsys):
    code, out, _ = run(capsys, "analyze", "--law", "binary")
    d = json.loads(out)
    assert code == 0
    assert d["moments"]["alpha"] == pytest.approx(0.5)
    assert d["moments"]["beta"] == pytest.approx(8 * np.log(2) - 5, rel=1e-6)


def test_analyze_flags_near_boundary(capsys):
    _, out, _ = run(capsys, "analyze", "--law", "beta:59.6,59.6")
    assert json.loads(out)["phase"]["near_boundary"] is True


@pytest.mark.parametrize("argv", [
    ["roots", "--law", "mary:"], ["roots", "--law", "nosuch"], ["simulate", "--law", "binary", "--x", "abc"],
    ["simulate", "--law", "binary", "--x", "10", "--n", "0"], ["fixedpoint", "--law", "binary", "--n", "100"],
    ["roots"], ["bogus", "--law", "binary"],
])
def test_configuration_errors_exit_1(capsys, argv):
    assert run(capsys, *argv)[0] == 1


def test_numerical_failure_exits_2(capsys, monkeypatch):
    from fragtree import spectral

    def boom(*a, **k):
        raise spectral.CountMismatchError("forced")

    monkeypatch.setattr(spectral, "find_roots", boom)
    code, _, err = run(capsys, "roots", "--law", "binary")
    assert code == 2 and "numerical failure" in err


def test_simulate_csv_is_reproducible(capsys, tmp_path):
    args = ["simulate", "--law", "quad:3", "--x", "10,100", "--n", "200", "--seed", "4"]
    _, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args, "--threads", "3")
    assert a == b
    lines = a.splitlines()
    assert lines[2] == "x,n,mean,var,m3,m4,stderr" and len(lines) == 5
    out = tmp_path / "s.csv"
    run(capsys, *args, "--out", str(out), "--raw", str(tmp_path / "raw"))
    assert out.read_text() == a
    raw = np.fromfile(tmp_path / "raw.1.f64", dtype="<f8")
    assert raw.size == 200 and raw.mean() == pytest.approx(float(lines[4].split(",")[2]))


def test_env_seed(capsys, monkeypatch):
    monkeypatch.setenv("FRAGTREE_SEED", "4")
    _, a, _ = run(capsys, "simulate", "--law", "binary", "--x", "50", "--n", "20")
    monkeypatch.delenv("FRAGTREE_SEED")
    _, b, _ = run(capsys, "simulate", "--law", "binary", "--x", "50", "--n", "20", "--seed", "4")
    assert a == b


def test_fixedpoint_command(capsys, tmp_path):
    code, out, _ = run(capsys, "fixedpoint", "--law", "quad:9", "--n", "5000", "--samples", str(tmp_path / "xi.csv"))
    d = json.loads(out)
    assert code == 0 and d["certificate"]["valid"]
    assert d["second_moments"]["abs2"] == pytest.approx(d["second_moment_targets"]["abs2"], rel=0.2)
    assert len((tmp_path / "xi.csv").read_text().splitlines()) == 5001


def test_verify_deterministic(capsys):
    code, out, _ = run(capsys, "verify", "--law", "det:1/3,2/3")
    d = json.loads(out)
    assert code == 0 and d["passed"]
    assert {r["name"] for r in d["records"]} >= {"deterministic_recursion_vs_simulation", "external_node_identity"}


def test_verify_periodic_quick(capsys):
    code, out, _ = run(capsys, "verify", "--law", "quad:9", "--budget", "quick")
    d = json.loads(out)
    assert code == 0 and d["phase_detected"] == "Periodic"
    assert "fixed_point_mean" in {r["name"] for r in d["records"]}


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "fragtree.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("fragtree ")
