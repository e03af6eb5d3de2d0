"""Results API for jet-codesign runs.

Serves the front, archive and run counters of an output directory as JSON
for external Pareto plots.

Run with: python -m dashboard.app
Or: python dashboard/app.py
"""

import sys
from pathlib import Path

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from flask import Flask, jsonify

from src import __version__
from src.config import OUTPUT_DIR
from src.exporter import jsonable, read_jsonl
from src.optimizer import Individual
from src.pipeline import archive_statistics

app = Flask(__name__)
app.config["RESULTS_DIR"] = OUTPUT_DIR


def results_dir() -> Path:
    return Path(app.config["RESULTS_DIR"])


def load_individuals(name: str) -> tuple[dict, list[Individual]]:
    """Manifest and parsed records of a JSON-lines result file; malformed records are skipped."""
    manifest, records = read_jsonl(results_dir() / name)
    individuals = []
    for record in records:
        try:
            individuals.append(Individual.from_record(record))
        except (KeyError, TypeError, ValueError):
            continue
    return manifest, individuals


def _payload(name: str):
    path = results_dir() / name
    if not path.exists():
        return jsonify({"error": f"{name} not found in {results_dir()}"}), 404
    manifest, individuals = load_individuals(name)
    return jsonify(jsonable({"manifest": manifest, "individuals": [ind.to_record() for ind in individuals]}))


@app.route("/api/front")
def api_front():
    """Pareto front members."""
    return _payload("front.jsonl")


@app.route("/api/archive")
def api_archive():
    """Every evaluated design."""
    return _payload("archive.jsonl")


@app.route("/api/stats")
def api_stats():
    """Evaluation counters, infeasible designs split by cause."""
    if not (results_dir() / "archive.jsonl").exists():
        return jsonify({"error": f"archive.jsonl not found in {results_dir()}"}), 404
    _, archive = load_individuals("archive.jsonl")
    _, front = load_individuals("front.jsonl")
    return jsonify(archive_statistics(archive, len(front)))


@app.route("/api/health")
def api_health():
    return jsonify({"status": "ok", "version": __version__, "results_dir": str(results_dir())})


if __name__ == "__main__":
    print("\n" + "=" * 50)
    print("JET CO-DESIGN RESULTS API")
    print("=" * 50)
    print(f"\nServing {results_dir()} at http://localhost:5000")
    print("Press Ctrl+C to stop\n")

    app.run(debug=True, host="0.0.0.0", port=5000)
