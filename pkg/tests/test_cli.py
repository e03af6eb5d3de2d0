import json

import pytest

import main
from src.config import DEFAULT_MODEL_PATH
from src.exporter import read_csv, read_json
from src.geometry import DESIGN_LIBRARY, GeometryError
from src.robot_model import load_model


def write_config(tmp_path, data):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


class TestParseTheta:
    def test_library_name(self):
        assert main.parse_theta("optim2") == DESIGN_LIBRARY["optim2"]

    def test_off_grid_values_are_accepted(self):
        assert main.parse_theta("1,47,88,50").as_tuple() == (1, 47, 88, 50)

    @pytest.mark.parametrize("text", ["1,2,3", "a,b,c,d", "0,40,80,50", "1,40,80,200"])
    def test_rejected(self, text):
        with pytest.raises(GeometryError):
            main.parse_theta(text)


def test_export_model(tmp_path):
    output = tmp_path / "optim3.urdf"
    code = main.main(["export-model", "--design", "optim3", "--out", str(tmp_path), "--output", str(output)])
    assert code == main.EXIT_OK
    loaded = load_model(output)
    assert loaded.design == DESIGN_LIBRARY["optim3"]
    assert loaded.n == load_model(DEFAULT_MODEL_PATH).n


def test_export_model_default_name(tmp_path):
    assert main.main(["export-model", "--theta", "1,48,100,130", "--out", str(tmp_path)]) == main.EXIT_OK
    assert (tmp_path / "model_1_48_100_130.urdf").exists()


def test_missing_model_is_a_usage_error(tmp_path, capsys):
    config = write_config(tmp_path, {"model": "nowhere/robot.urdf"})
    assert main.main(["export-model", "--config", config, "--out", str(tmp_path)]) == main.EXIT_USAGE
    assert "Model file not found: nowhere/robot.urdf" in capsys.readouterr().err


def test_bad_theta_is_a_usage_error(tmp_path):
    assert main.main(["fem-check", "--theta", "0,40,80,50", "--out", str(tmp_path)]) == main.EXIT_USAGE


def test_unknown_trajectory_is_a_usage_error(tmp_path):
    args = ["validate", "--designs", "original", "--trajectories", "traj9", "--out", str(tmp_path)]
    assert main.main(args) == main.EXIT_USAGE
    assert main.main(["simulate", "--trajectory", "loop", "--out", str(tmp_path)]) == main.EXIT_USAGE


def test_fem_check_rejects_thin_plates(tmp_path, capsys):
    config = write_config(tmp_path, {"geometry": {"plate_thickness_override": 0.002}})
    code = main.main(["fem-check", "--config", config, "--out", str(tmp_path), "--stl"])
    assert code == main.EXIT_FAILURE
    assert "[WARN] Infeasible" in capsys.readouterr().out
    assert (tmp_path / "fem" / "forearm-support.stl").exists()


def test_simulate_reports_failed_flights(tmp_path):
    config = write_config(tmp_path, {"simulation": {"u_max_override": -5.0}})
    code = main.main(["simulate", "--config", config, "--trajectory", "hover", "--out", str(tmp_path)])
    assert code == main.EXIT_FAILURE
    payload = read_json(tmp_path / "fitness_hover.json")
    assert payload["success"] is False
    assert payload["cause"]
    assert payload["manifest"]["command"] == "simulate"
    log = read_csv(tmp_path / "sim_hover.csv")
    assert len(log) == payload["steps"]


@pytest.mark.slow
def test_optimize_is_independent_of_worker_count(tmp_path, capsys):
    config = write_config(tmp_path, {"optimizer": {"population_size": 4, "generations": 1}})
    serial, parallel = tmp_path / "serial", tmp_path / "parallel"
    assert main.main(["optimize", "--config", config, "--out", str(serial), "--quiet"]) == main.EXIT_OK
    assert main.main(["optimize", "--config", config, "--out", str(parallel), "--jobs", "2", "--quiet"]) == main.EXIT_OK
    for name in ("archive.jsonl", "front.jsonl", "summary.csv"):
        assert (serial / name).read_bytes() == (parallel / name).read_bytes()
    assert "designs were deemed unfeasible" in capsys.readouterr().out


def test_validate_fills_the_design_by_envelope_table(tmp_path):
    short = {"segments": [{"action": "hover", "duration": 0.05}]}
    config = write_config(tmp_path, {"trajectories": {f"traj{i}": short for i in range(1, 6)}})
    main.main(["validate", "--config", config, "--out", str(tmp_path), "--quiet"])
    table = read_csv(tmp_path / "validation.csv")
    assert len(table) == 25
    expected = {(design, f"traj{i}") for design in DESIGN_LIBRARY for i in range(1, 6)}
    assert set(zip(table["design"], table["trajectory"])) == expected
    assert not table["cause"].fillna("").str.startswith("simulation error").any()
