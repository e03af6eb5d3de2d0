"""Configuration management for jet-codesign."""

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Project paths
PROJECT_ROOT = Path(__file__).parent.parent
DATA_DIR = PROJECT_ROOT / "data"
DEFAULT_CONFIG_PATH = Path(os.getenv("JETCODESIGN_CONFIG", str(DATA_DIR / "default_config.json")))
DEFAULT_MODEL_PATH = DATA_DIR / "ironcub_standin.urdf"

# Run defaults overridable from the environment
OUTPUT_DIR = Path(os.getenv("JETCODESIGN_OUT", "results"))
DEFAULT_JOBS = int(os.getenv("JETCODESIGN_JOBS", "1"))
DEFAULT_SEED = int(os.getenv("JETCODESIGN_SEED", "42"))

TOOL_NAME = "jet-codesign"

# Worker count and output location never change results
RUNTIME_KEYS = ("jobs", "output_dir")

# Table headers
SUMMARY_HEADERS = [
    "angle",
    "distance",
    "offset",
    "length",
    "delta_h",
    "delta_sdot",
    "delta_T",
    "sf",
    "feasible",
    "rank",
]

VALIDATION_HEADERS = [
    "design",
    "angle",
    "distance",
    "offset",
    "length",
    "trajectory",
    "status",
    "cause",
    "delta_h",
    "delta_sdot",
    "delta_T",
]

# Envelopes flown by cmd_validate, in order
VALIDATION_TRAJECTORIES = ["traj1", "traj2", "traj3", "traj4", "traj5"]


class ConfigError(ValueError):
    """Unreadable, inconsistent or incomplete run configuration."""


def deep_merge(base: dict, override: dict) -> dict:
    """Recursively merge ``override`` into a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _resolve(path_value: str, relative_to: Path) -> Path:
    path = Path(path_value)
    if not path.is_absolute() and not path.exists():
        candidate = relative_to / path
        if candidate.exists():
            return candidate
    return path


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical config, ignoring keys that cannot change results."""
    relevant = {k: v for k, v in config.items() if k not in RUNTIME_KEYS}
    canonical = json.dumps(relevant, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_run_config(path: Optional[Path] = None, overrides: Optional[dict] = None) -> dict:
    """Defaults, then the user file, then CLI overrides. Validates referenced paths."""
    config = _read_json(Path(DATA_DIR / "default_config.json"))
    if path is not None and Path(path).resolve() != (DATA_DIR / "default_config.json").resolve():
        config = deep_merge(config, _read_json(Path(path)))
    config = deep_merge(config, {k: v for k, v in (overrides or {}).items() if v is not None})

    base_dir = Path(path).parent if path is not None else DATA_DIR
    model_path = config.get("model")
    if not model_path:
        raise ConfigError("Config needs a 'model' path")
    resolved = _resolve(model_path, base_dir)
    if not resolved.exists():
        resolved = _resolve(model_path, PROJECT_ROOT)
    if not resolved.exists():
        raise ConfigError(f"Model file not found: {model_path}")
    config["model"] = str(resolved)

    sim = config.get("simulation", {})
    if float(sim.get("dt", 0.0)) <= 0:
        raise ConfigError("simulation.dt must be positive")
    for name in config.get("trajectories", {}):
        if not isinstance(config["trajectories"][name], dict):
            raise ConfigError(f"Trajectory '{name}' must be an object")
    try:
        config["jobs"] = max(1, int(config.get("jobs", DEFAULT_JOBS)))
        config["seed"] = int(config.get("seed", DEFAULT_SEED))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Bad jobs/seed value: {e}") from e
    config["output_dir"] = str(config.get("output_dir") or OUTPUT_DIR)
    return config
