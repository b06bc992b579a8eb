import csv
import json

import pytest
import yaml

from cnls.cli import main
from cnls.evolution import CSV_COLUMNS


def _config(tmp_path, name="c.yaml", **raw):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return str(path)


SMALL = dict(params={"d": 1, "p": 7}, grid={"n": 256, "L": 20.0}, radial_grid={"n": 4001},
             controls={"dt0": 0.005, "t_end": 0.5, "drift_budget": 1e-4}, diagnostics={"virial_R": 6.0})


def test_ground_state_command(tmp_path):
    cfg = _config(tmp_path, params={"d": 1, "p": 7})
    assert main(["ground-state", "--config", cfg, "--out", str(tmp_path / "gs"), "--quiet"]) == 0
    summary = json.loads((tmp_path / "gs" / "ground_state.json").read_text())
    assert summary["residual_sup"] < 1e-8 and summary["m_omega"] > 0
    assert (tmp_path / "gs" / "profile.dat").is_file()


def test_critical_ground_state_command(tmp_path):
    cfg = _config(tmp_path, params={"d": 3, "p": 5})
    assert main(["ground-state", "--config", cfg, "--out", str(tmp_path / "w"), "--quiet"]) == 0
    summary = json.loads((tmp_path / "w" / "ground_state.json").read_text())
    assert summary["E0_of_W"] == pytest.approx(4.273664068323043, rel=1e-12)
    assert summary["omega_independent"] is True


def test_classify_command(tmp_path):
    cfg = _config(tmp_path, params={"d": 2, "p": 5}, initial_data={"kind": "dilated_ground_state", "eps": 0.5})
    assert main(["classify", "--config", cfg, "--out", str(tmp_path / "c"), "--quiet"]) == 0
    m = json.loads((tmp_path / "c" / "classification.json").read_text())
    assert m["set"] == "A_minus" and m["K"] < 0


def test_evolve_writes_trajectory_and_summary(tmp_path):
    cfg = _config(tmp_path, **SMALL, initial_data={"kind": "ground_state_multiple", "c": 0.3})
    out = tmp_path / "e"
    assert main(["evolve", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    with open(out / "trajectory.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "completed"
    assert len(rows) == summary["steps"] + 2
    assert summary["membership"]["set"] == "A_plus"
    assert summary["drifts"]["mass_drift"] < 1e-10
    assert summary["monitors"]["K_nonnegative"] is True
    assert summary["virial_cutoff"] == {"kind": "blowup_cutoff", "R": 6.0}


def test_evolve_is_reproducible(tmp_path):
    cfg = _config(tmp_path, **SMALL, initial_data={"kind": "gaussian", "amplitude": 1.0, "width": 1.5})
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for o in outs:
        assert main(["evolve", "--config", cfg, "--out", str(o), "--quiet"]) == 0
    for name in ("trajectory.csv", "summary.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_zero_data_evolve(tmp_path):
    cfg = _config(tmp_path, **SMALL, initial_data={"kind": "gaussian", "amplitude": 0.0, "width": 1.0})
    out = tmp_path / "z"
    assert main(["evolve", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "completed" and summary["drifts"]["mass_drift"] == 0.0


def test_file_data_round_trip(tmp_path):
    gs_cfg = _config(tmp_path, "gs.yaml", params={"d": 1, "p": 7})
    assert main(["ground-state", "--config", gs_cfg, "--out", str(tmp_path / "gs"), "--quiet"]) == 0
    path = str(tmp_path / "gs" / "profile.dat")
    cfg = _config(tmp_path, params={"d": 1, "p": 7}, initial_data={"kind": "file", "path": path})
    assert main(["classify", "--config", cfg, "--out", str(tmp_path / "c"), "--quiet"]) == 0
    m = json.loads((tmp_path / "c" / "classification.json").read_text())
    assert abs(m["margin"]) < 1e-10
    wrong_d = _config(tmp_path, "w.yaml", params={"d": 2, "p": 5}, initial_data={"kind": "file", "path": path})
    assert main(["classify", "--config", wrong_d, "--out", str(tmp_path / "w"), "--quiet"]) == 1
    assert not (tmp_path / "w").exists()


def test_verify_passes_in_one_dimension(tmp_path):
    cfg = _config(tmp_path, params={"d": 1, "p": 7}, verify={"n_bumps": 5, "trapping_samples": 10})
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "v"), "--quiet"]) == 0
    report = json.loads((tmp_path / "v" / "verify.json").read_text())
    assert report["all_passed"] is True


def test_sweep_over_multiples(tmp_path):
    cfg = _config(tmp_path, params={"d": 1, "p": 7}, radial_grid={"n": 4001},
                  sweep={"key": "initial_data.c", "values": [0.5, 1.2], "command": "classify"})
    out = tmp_path / "s"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    index = json.loads((out / "sweep.json").read_text())
    sets = [json.loads((out / r["dir"] / "classification.json").read_text())["set"] for r in index["runs"]]
    assert sets == ["A_plus", "A_minus"]


def test_sweep_without_section_is_invalid(tmp_path):
    cfg = _config(tmp_path, params={"d": 1, "p": 7})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s"), "--quiet"]) == 1


@pytest.mark.parametrize("raw", [
    {"params": {"d": 1, "p": 5}},
    {"params": {"d": 1, "p": 7}, "grid": {"n": 256, "spacing": 0.1}},
])
def test_invalid_config_exits_one_without_output(tmp_path, raw):
    cfg = _config(tmp_path, **raw)
    out = tmp_path / "bad"
    assert main(["evolve", "--config", cfg, "--out", str(out)]) == 1
    assert not out.exists()


def test_missing_config_and_bad_arguments(tmp_path):
    assert main(["evolve", "--config", str(tmp_path / "none.yaml")]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["evolve"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["launch", "--config", "x"])
    assert exc.value.code == 1


def test_bad_log_level(tmp_path, monkeypatch):
    monkeypatch.setenv("NLS_LOG_LEVEL", "loud")
    cfg = _config(tmp_path, params={"d": 1, "p": 7})
    assert main(["classify", "--config", cfg, "--out", str(tmp_path / "x")]) == 1
    assert not (tmp_path / "x").exists()


def test_solver_failure_exits_two(tmp_path):
    cfg = _config(tmp_path, params={"d": 1, "p": 7}, radial_grid={"n": 101, "r_max": 0.5})
    out = tmp_path / "f"
    assert main(["ground-state", "--config", cfg, "--out", str(out), "--quiet"]) == 2
    assert not out.exists()
