import csv
from pathlib import Path

import pytest

from cotune.cli import main
from cotune.output import trace_header

CONFIGS = Path(__file__).resolve().parents[1] / "src" / "cotune" / "configs"
RENDEZVOUS = CONFIGS / "rendezvous.yaml"


def small_rendezvous(tmp_path, **extra):
    text = RENDEZVOUS.read_text().replace("T: 60", "T: 15")
    for k, v in extra.items():
        text = text.replace(k, v)
    path = tmp_path / "small.yaml"
    path.write_text(text)
    return path


def test_tune_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    assert main(["tune", "--config", str(RENDEZVOUS), "--out", str(out), "--rounds", "3", "--quiet"]) == 0
    for name in ["trace.csv", "relative_loss.svg", "disagreement.svg"] + \
            [f"trajectory_{w}_agent{i}.csv" for w in ("first", "last") for i in range(5)]:
        assert (out / name).is_file(), name
    rows = list(csv.reader(open(out / "trace.csv")))
    assert rows[0] == trace_header(5, 2)
    assert [r[0] for r in rows[1:]] == ["0", "1", "2"]
    traj = list(csv.reader(open(out / "trajectory_first_agent0.csv")))
    assert traj[0] == ["t", "x_1", "x_2", "x_3", "u_1", "u_2"]
    assert len(traj) == 62 and traj[-1][4:] == ["", ""]
    svg = (out / "disagreement.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg and "1e" in svg


def test_tune_is_byte_identical(tmp_path):
    cfg = small_rendezvous(tmp_path)
    for d in ("a", "b"):
        assert main(["tune", "--config", str(cfg), "--out", str(tmp_path / d), "--rounds", "4", "--quiet"]) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_seed_override_changes_run(tmp_path):
    cfg = small_rendezvous(tmp_path)
    for d, seed in (("a", "0"), ("b", "1")):
        main(["tune", "--config", str(cfg), "--out", str(tmp_path / d), "--rounds", "1",
              "--seed", seed, "--quiet"])
    assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "b" / "trace.csv").read_bytes()


def test_zero_rounds_is_config_error(tmp_path, capsys):
    assert main(["tune", "--config", str(RENDEZVOUS), "--out", str(tmp_path), "--rounds", "0"]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["tune", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("text", ["problem: {type: rendezvous, T: 0}\n",
                                  "problem: {type: rendezvous}\nbogus: 1\n",
                                  "problem: [unclosed\n",
                                  "problem: {type: rendezvous}\ngraph: {rounds: [[[0, 9]]]}\n"])
def test_invalid_configs_exit_2(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    assert main(["check-grad", "--config", str(path)]) == 2


def test_check_grad_passes_on_rendezvous(tmp_path, capsys):
    assert main(["check-grad", "--config", str(small_rendezvous(tmp_path)), "--quiet"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_check_grad_fails_on_corrupted_derivatives(tmp_path, capsys):
    cfg = small_rendezvous(tmp_path, **{"dt: 0.1": "dt: 0.1\n  corrupt_derivatives: true"})
    assert main(["check-grad", "--config", str(cfg), "--quiet"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_check_grad_theta_free(capsys):
    assert main(["check-grad", "--config", str(CONFIGS / "lqr_theta_free.yaml")]) == 0
    out = capsys.readouterr().out
    assert "max sensitivity error 0.000e+00," in out and "PASS" in out
    assert out.count("|dxi/dth|max 0.000e+00") == 2


@pytest.mark.parametrize("name", ["rendezvous.yaml", "convex_lqr.yaml", "lqr_theta_free.yaml"])
def test_solve_bundled_configs(tmp_path, capsys, name):
    assert main(["solve", "--config", str(CONFIGS / name), "--agent", "1", "--out", str(tmp_path)]) == 0
    lines = dict(l.split(" = ") for l in capsys.readouterr().out.splitlines())
    assert float(lines["stationarity"]) <= 1e-8
    assert lines["converged"] == "True"
    assert int(lines["warm_restart_iterations"]) <= 2
    assert (tmp_path / "trajectory_agent1.csv").is_file()


def test_solve_bad_agent_index(tmp_path):
    assert main(["solve", "--config", str(RENDEZVOUS), "--agent", "7", "--out", str(tmp_path)]) == 2
