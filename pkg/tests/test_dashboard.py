import pytest

from dashboard.app import app
from src.exporter import Manifest, write_jsonl
from src.geometry import GeometryParams
from src.optimizer import Individual


@pytest.fixture
def client(tmp_path):
    app.config["RESULTS_DIR"] = tmp_path
    app.config["TESTING"] = True
    with app.test_client() as client:
        yield client


@pytest.fixture
def results(tmp_path):
    manifest = Manifest(42, "abc123", "optimize")
    good = Individual.evaluated(GeometryParams(1, 48, 100, 130), float("inf"), True, (1.0, 2.0, 3.0))
    cracked = Individual.evaluated(GeometryParams(79, 40, 80, 50), 4.0, None, cause="SF 4.000 < 10")
    crashed = Individual.evaluated(GeometryParams(40, 70, 100, 100), 15.0, False, cause="QP failure")
    write_jsonl(tmp_path / "archive.jsonl", [i.to_record() for i in (good, cracked, crashed)], manifest)
    write_jsonl(tmp_path / "front.jsonl", [good.to_record()], manifest)
    return tmp_path


def test_health(client, tmp_path):
    data = client.get("/api/health").get_json()
    assert data["status"] == "ok"
    assert data["results_dir"] == str(tmp_path)


def test_missing_results(client):
    for route in ("/api/front", "/api/archive", "/api/stats"):
        response = client.get(route)
        assert response.status_code == 404
        assert "not found" in response.get_json()["error"]


def test_front(client, results):
    data = client.get("/api/front").get_json()
    assert data["manifest"]["config_hash"] == "abc123"
    [member] = data["individuals"]
    assert member["theta"] == [1, 48, 100, 130]
    assert member["sf"] == "inf"


def test_stats(client, results):
    assert client.get("/api/stats").get_json() == {
        "evaluations": 3, "feasible": 1, "infeasible": 2, "structural": 1, "flight": 1, "front_size": 1,
    }


def test_malformed_records_are_skipped(client, results):
    with open(results / "archive.jsonl", "a", encoding="utf-8") as f:
        f.write('{"sf": 3.0}\n')
    assert len(client.get("/api/archive").get_json()["individuals"]) == 3
