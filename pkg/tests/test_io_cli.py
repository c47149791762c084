import json

import numpy as np
import pytest

from heatflow import cli
from heatflow.errors import ChartViolation
from heatflow.io import load_trajectory_dir, read_csv, read_snapshot, read_trajectory, write_snapshot
from heatflow.scenario import from_dict

SMALL = {
    "name": "small",
    "seed": 2,
    "target": {"kind": "hyperbolic", "dim": 2},
    "grid": {"kind": "interval", "lengths": [1.0], "nodes": [17]},
    "initial_map": {"recipe": "perturbed-geodesic-path", "start": [-0.5, 1.0], "end": [0.5, 1.0],
                    "perturbation": 0.05, "modes": 2},
    "flow": {"t_end": 4.0, "snapshot_stride": 5, "stop_tolerance": 1e-9},
    "analysis": {"eig_k": 2, "gap_stride": 10, "identity_t_min": 0.1, "identity_tol": 0.1},
    "output": {"snapshot_every": 1},
}


@pytest.fixture()
def config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


def run_cli(args, capsys):
    code = cli.main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def test_run_writes_artifacts_with_hash_and_seed(config, tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run_cli(["run", config, "--out", out], capsys)
    assert code == 0, stdout
    scen = from_dict(SMALL)
    digest = scen.config_hash()
    for name in ("trajectory.csv", "identity.csv", "energy_gap.csv"):
        meta, header, rows = read_csv(out / name)
        assert meta["config_hash"] == digest and meta["seed"] == "2" and rows
    for name in ("spectrum.json", "rate_report.json", "scenario.json"):
        data = json.loads((out / name).read_text())
        assert data["config_hash"] == digest and data["seed"] == 2
    assert "PASS  rate_verdict" in stdout
    assert (out / "summary.txt").read_text().startswith("scenario  small")
    plots = (out / "plots.txt").read_text().splitlines()
    assert plots[0].endswith(f"config_hash={digest} seed=2")
    assert any(line.startswith("tension | trajectory.csv | t | tension_l2") for line in plots)
    assert (out / "figures" / "tension.png").stat().st_size > 0
    _, cols = read_trajectory(out / "trajectory.csv")
    assert np.isfinite(cols["lambda1"]).sum() >= 2


def test_reruns_are_byte_identical(config, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(["run", config, "--out", a, "--no-figures"], capsys)[0] == 0
    assert run_cli(["run", "--config", config, "--out", b, "--no-figures"], capsys)[0] == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) > 8
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_seed_override_changes_hash(config, tmp_path, capsys):
    out = tmp_path / "seeded"
    assert run_cli(["run", config, "--out", out, "--seed", "7", "--no-figures"], capsys)[0] == 0
    data = json.loads((out / "spectrum.json").read_text())
    assert data["seed"] == 7 and data["config_hash"] == from_dict(dict(SMALL, seed=7)).config_hash()


def test_env_var_overrides_output_root(config, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HEATFLOW_OUT", str(tmp_path / "env"))
    assert run_cli(["run", config, "--out", tmp_path / "ignored", "--no-figures"], capsys)[0] == 0
    assert (tmp_path / "env" / "small" / "trajectory.csv").exists()
    assert not (tmp_path / "ignored").exists()


def test_spectrum_and_verify_subcommands(config, tmp_path, capsys):
    out = tmp_path / "run"
    assert run_cli(["run", config, "--out", out, "--no-figures"], capsys)[0] == 0
    snaps = sorted((out / "snapshots").glob("snapshot_*.csv"))
    code, stdout, _ = run_cli(["spectrum", snaps[-1], "--k", 5], capsys)
    assert code == 0
    data = json.loads(stdout)
    assert len(data["lambda"]) == 5 and data["seed"] == "2"
    expected = json.loads((out / "spectrum.json").read_text())["lambda"]
    assert data["lambda"][:2] == pytest.approx(expected, rel=1e-8)

    code, stdout, _ = run_cli(["verify", "identity", out], capsys)
    assert code == 0
    assert stdout.splitlines()[0] == "t,half_dnorm2_dt,minus_KTT,residual"
    assert "max_residual" in stdout.splitlines()[-1]

    code, stdout, _ = run_cli(["verify", "rate", out], capsys)
    assert code == 0 and json.loads(stdout)["verdict"] == "PASS"


def test_snapshot_round_trip(config, tmp_path):
    f = from_dict(SMALL).initial()
    path = write_snapshot(tmp_path / "s.csv", f, 0.25, {"config_hash": "abc", "seed": 1})
    g, t, meta = read_snapshot(path)
    assert t == 0.25 and meta["config_hash"] == "abc"
    assert np.array_equal(g.values, f.values) and g.grid == f.grid and g.target == f.target


def test_load_trajectory_dir(config, tmp_path, capsys):
    out = tmp_path / "run"
    run_cli(["run", config, "--out", out, "--no-figures"], capsys)
    traj, scen = load_trajectory_dir(out)
    assert scen["name"] == "small" and traj.converged
    assert len(traj) == len(list((out / "snapshots").glob("*.csv")))


def test_sweep_writes_order_table(config, tmp_path, capsys):
    out = tmp_path / "sweep"
    code, stdout, _ = run_cli(["sweep", config, "--levels", 3, "--jobs", 2, "--t-end", 0.5, "--out", out], capsys)
    assert code == 0
    meta, header, rows = read_csv(out / "sweep.csv")
    assert header[-1] == "order_lambda1" and len(rows) == 3
    assert [int(r[1]) for r in rows] == [17, 33, 65]
    # lambda_1 converges at second order in h
    assert float(rows[2][-1]) == pytest.approx(2.0, abs=0.3)


def test_config_errors_exit_2_with_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(dict(SMALL, flow={"dt": 1.0})))
    code, _, err = run_cli(["run", bad], capsys)
    payload = json.loads(err)
    assert code == 2 and payload["error"] == "ValidationError" and payload["field"] == "dt"

    broken = tmp_path / "broken.json"
    broken.write_text("{\n  \"seed\": 1,\n  ]")
    code, _, err = run_cli(["run", broken], capsys)
    assert code == 2 and json.loads(err)["line"] == 3

    code, _, err = run_cli(["run", tmp_path / "missing.json"], capsys)
    assert code == 2 and json.loads(err)["error"] == "ConfigError"
    assert run_cli(["run"], capsys)[0] == 2
    assert run_cli(["frobnicate"], capsys)[0] == 2


def test_numerical_failure_exits_3(config, tmp_path, capsys, monkeypatch):
    def explode(*args, **kwargs):
        raise ChartViolation("left the chart")

    monkeypatch.setattr(cli, "run_flow", explode)
    code, _, err = run_cli(["run", config, "--out", tmp_path / "x"], capsys)
    assert code == 3 and json.loads(err)["error"] == "ChartViolation"


def test_failed_check_exits_1(tmp_path, capsys):
    data = dict(SMALL, analysis={"eig_k": 2, "identity_tol": 1e-12})
    path = tmp_path / "strict.json"
    path.write_text(json.dumps(data))
    code, stdout, _ = run_cli(["run", path, "--out", tmp_path / "o", "--no-figures"], capsys)
    assert code == 1 and "FAIL  evolution_identity" in stdout
