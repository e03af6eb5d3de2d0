"""Result files: CSV tables, JSON documents and JSON-lines archives.

Every file starts with the run manifest (tool version, seed, config hash)
so any artifact can be traced back to the run that produced it. Files
carry no timestamps; reruns with the same inputs are byte-identical.
"""

import json
import math
from pathlib import Path
from typing import Iterable, Optional

import pandas as pd

from . import __version__
from .config import TOOL_NAME


class Manifest:
    """Provenance block written at the top of every output file."""

    def __init__(self, seed: int, config_hash: str, command: str = ""):
        self.seed = int(seed)
        self.config_hash = config_hash
        self.command = command

    def as_dict(self) -> dict:
        data = {"tool": TOOL_NAME, "version": __version__, "seed": self.seed, "config_hash": self.config_hash}
        if self.command:
            data["command"] = self.command
        return data

    def csv_header(self) -> str:
        return "".join(f"# {key}: {value}\n" for key, value in self.as_dict().items())

    @classmethod
    def from_config(cls, config: dict, config_hash: str, command: str = "") -> "Manifest":
        return cls(config.get("seed", 0), config_hash, command)


def jsonable(value):
    """JSON-safe copy: non-finite floats become strings, tuples become lists."""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return value
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if hasattr(value, "item"):
        return jsonable(value.item())
    return value


def to_json_line(record: dict) -> str:
    return json.dumps(jsonable(record), sort_keys=True, separators=(",", ":"))


def write_csv(path: Path, rows: list[dict], columns: list[str], manifest: Optional[Manifest] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=columns)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if manifest is not None:
            f.write(manifest.csv_header())
        frame.to_csv(f, index=False, float_format="%.10g")
    return path


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_json(path: Path, payload: dict, manifest: Optional[Manifest] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"manifest": manifest.as_dict()} if manifest is not None else {}
    document.update(payload)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(jsonable(document), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_json(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_jsonl(path: Path, records: Iterable[dict], manifest: Optional[Manifest] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        if manifest is not None:
            f.write(to_json_line({"manifest": manifest.as_dict()}) + "\n")
        for record in records:
            f.write(to_json_line(record) + "\n")
    return path


def append_jsonl(path: Path, record: dict, manifest: Optional[Manifest] = None) -> Path:
    """Append one record, writing the manifest first if the file is new."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    is_new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", encoding="utf-8") as f:
        if is_new and manifest is not None:
            f.write(to_json_line({"manifest": manifest.as_dict()}) + "\n")
        f.write(to_json_line(record) + "\n")
    return path


def read_jsonl(path: Path) -> tuple[dict, list[dict]]:
    """(manifest, records). Truncated trailing lines from an interrupted run are skipped."""
    manifest, records = {}, []
    path = Path(path)
    if not path.exists():
        return manifest, records
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                continue
            if "manifest" in record and len(record) == 1:
                manifest = record["manifest"]
            else:
                records.append(record)
    return manifest, records
