"""Cascaded design evaluation: structural gate first, flight only for survivors."""

import multiprocessing as mp
from pathlib import Path
from typing import Callable, Optional

from .config import ConfigError, VALIDATION_TRAJECTORIES, config_hash
from .controller import ControllerGains
from .exporter import Manifest, append_jsonl, read_jsonl, write_jsonl
from .geometry import GeometryConfig, GeometryError, GeometryParams
from .optimizer import Individual, OptimizerConfig
from .robot_model import RobotModel, apply_design, load_model
from .simulation import DEFAULT_MAX_POSITION_ERROR, FlightResult, compute_fitness, run_flight
from .structural import FemConfig, GateResult, Material, StructuralGate
from .trajectory import TrajectoryError, envelope_library, get_spec

OPTIMIZATION_ENVELOPE = "optim"


class FlightSetup:
    """Everything a closed-loop run needs, read once from the run config."""

    def __init__(self, config: dict, model: Optional[RobotModel] = None):
        self.config = config
        self.model = model or load_model(config["model"])
        self.geometry = GeometryConfig.from_dict(config.get("geometry"))
        sim = config.get("simulation", {})
        self.dt = float(sim.get("dt", 0.01))
        self.max_position_error = float(sim.get("max_position_error", DEFAULT_MAX_POSITION_ERROR))
        override = sim.get("u_max_override")
        self.u_max_override = None if override is None else float(override)
        self.envelope = sim.get("envelope", OPTIMIZATION_ENVELOPE)
        self.sum_of_squares = bool(config.get("fitness", {}).get("sum_of_squares", False))
        self.library = envelope_library(config.get("trajectories"))

        self.gains = ControllerGains.from_dict(config.get("gains"), self.model.n)
        problems = self.gains.check()
        if problems:
            raise ConfigError("Invalid controller gains: " + "; ".join(problems))

    def check_trajectory(self, name: str):
        try:
            get_spec(name, self.library)
        except TrajectoryError as e:
            raise ConfigError(str(e)) from e

    def fly(self, theta: GeometryParams, trajectory: Optional[str] = None) -> tuple[FlightResult, Optional[tuple]]:
        """Flight of the robot carrying θ's brackets, and its fitness when the run succeeded."""
        model = apply_design(self.model, theta, self.geometry)
        result = run_flight(
            model, self.gains, trajectory or self.envelope, self.dt,
            u_max_override=self.u_max_override,
            max_position_error=self.max_position_error,
            library=self.library,
        )
        if not result.success:
            return result, None
        return result, compute_fitness(result.log, self.sum_of_squares).as_tuple()


def make_gate(config: dict) -> StructuralGate:
    return StructuralGate(
        GeometryConfig.from_dict(config.get("geometry")),
        Material.from_dict(config.get("material")),
        FemConfig.from_dict(config.get("fem")),
    )


class Evaluator:
    """Memoized θ -> Individual map with an append-only archive on disk.

    ``gate`` and ``flight`` can be replaced for tests: ``gate(θ)`` returns a
    GateResult, ``flight(θ)`` returns ``(qp_ok, objectives, cause)``.
    """

    def __init__(self, config: dict, model: Optional[RobotModel] = None,
                 gate: Optional[Callable[[GeometryParams], GateResult]] = None,
                 flight: Optional[Callable[[GeometryParams], tuple]] = None,
                 archive_path: Optional[Path] = None, manifest: Optional[Manifest] = None,
                 jobs: int = 1, verbose: bool = False):
        self.config = config
        self.custom = gate is not None or flight is not None
        self.gate = gate or make_gate(config)
        self._setup = None if flight is not None else FlightSetup(config, model)
        self.flight = flight or self._fly
        self.threshold = FemConfig.from_dict(config.get("fem")).threshold
        self.archive_path = Path(archive_path) if archive_path else None
        self.manifest = manifest or Manifest.from_config(config, config_hash(config))
        self.jobs = max(1, int(jobs))
        self.verbose = verbose
        self.memo: dict[GeometryParams, Individual] = {}
        self.gate_calls = 0
        self.sim_calls = 0
        self.resumed = 0
        if self.archive_path is not None:
            self._resume()

    def _resume(self):
        manifest, records = read_jsonl(self.archive_path)
        if not records:
            return
        if manifest.get("config_hash") != self.manifest.config_hash:
            if self.verbose:
                print(f"   [WARN] {self.archive_path} was written by another config; starting a fresh archive")
            write_jsonl(self.archive_path, [], self.manifest)
            return
        for record in records:
            try:
                ind = Individual.from_record(record)
            except (KeyError, TypeError, ValueError, GeometryError):
                continue
            self.memo.setdefault(ind.theta, ind)
        self.resumed = len(self.memo)
        if self.verbose:
            print(f"   [OK] Resumed {self.resumed} evaluations from {self.archive_path}")

    def _fly(self, theta: GeometryParams) -> tuple:
        result, objectives = self._setup.fly(theta)
        return result.success, objectives, result.cause

    def _evaluate_new(self, theta: GeometryParams, generation: int) -> Individual:
        self.gate_calls += 1
        try:
            gate = self.gate(theta)
        except Exception as e:
            return Individual.evaluated(theta, 0.0, None, cause=f"gate error: {e}", generation=generation,
                                        sf_threshold=self.threshold)
        if not gate.feasible:
            return Individual.evaluated(theta, gate.sf, None, cause=gate.cause, generation=generation,
                                        sf_threshold=self.threshold)

        self.sim_calls += 1
        try:
            qp_ok, objectives, cause = self.flight(theta)
        except Exception as e:
            qp_ok, objectives, cause = False, None, f"simulation error: {e}"
        return Individual.evaluated(theta, gate.sf, bool(qp_ok), objectives, cause, generation,
                                    sf_threshold=self.threshold)

    def _record(self, ind: Individual):
        self.memo[ind.theta] = ind
        if self.archive_path is not None:
            append_jsonl(self.archive_path, ind.to_record(), self.manifest)
        if self.verbose:
            status = "[OK]" if ind.feasible else "[WARN]"
            detail = ", ".join(f"{v:.4g}" for v in ind.objectives) if ind.objectives else ind.cause
            print(f"   {status} {ind.theta}: {detail}")

    def evaluate(self, theta: GeometryParams, generation: int = 0) -> Individual:
        if theta not in self.memo:
            self._record(self._evaluate_new(theta, generation))
        return self.memo[theta]

    def evaluate_many(self, thetas: list, generation: int = 0) -> list[Individual]:
        """Evaluate a batch; new designs are merged in θ order whatever the worker count."""
        pending = sorted(set(t for t in thetas if t not in self.memo))
        if pending and self.verbose:
            print(f"   [FEM] {len(pending)} new designs ({len(thetas) - len(pending)} cached)")

        if self.jobs > 1 and len(pending) > 1 and not self.custom:
            with mp.get_context("spawn").Pool(processes=min(self.jobs, len(pending)),
                                              initializer=_init_worker, initargs=(self.config,)) as pool:
                results = pool.starmap(_evaluate_in_worker, [(t, generation) for t in pending])
            for ind in results:
                self.gate_calls += 1
                self.sim_calls += ind.qp_ok is not None
                self._record(ind)
        else:
            for theta in pending:
                self._record(self._evaluate_new(theta, generation))
        return [self.memo[t] for t in thetas]

    def archive(self) -> list[Individual]:
        return sorted(self.memo.values(), key=lambda ind: ind.theta)


_worker: Optional[Evaluator] = None


def _init_worker(config: dict):
    global _worker
    _worker = Evaluator(config)


def _evaluate_in_worker(theta: GeometryParams, generation: int) -> Individual:
    return _worker._evaluate_new(theta, generation)


def archive_statistics(individuals: list, front_size: Optional[int] = None) -> dict:
    """Counts of an evaluation archive, with infeasible designs split by cause."""
    stats = {
        "evaluations": len(individuals),
        "feasible": 0,
        "infeasible": 0,
        "structural": 0,
        "flight": 0,
    }
    for ind in individuals:
        if ind.feasible:
            stats["feasible"] += 1
            continue
        stats["infeasible"] += 1
        if ind.qp_ok is None:
            stats["structural"] += 1
        else:
            stats["flight"] += 1
    if front_size is not None:
        stats["front_size"] = front_size
    return stats


def optimizer_config(config: dict) -> OptimizerConfig:
    try:
        return OptimizerConfig.from_dict(config.get("optimizer"), seed=config.get("seed"))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def _validate_one(config: dict, name: str, theta: GeometryParams, trajectory: str) -> dict:
    setup = _validation_setup(config)
    row = {"design": name, **theta.as_dict(), "trajectory": trajectory,
           "status": "ok", "cause": "", "delta_h": None, "delta_sdot": None, "delta_T": None}
    try:
        result, objectives = setup.fly(theta, trajectory)
    except Exception as e:
        row.update(status="failed", cause=f"simulation error: {e}")
        return row
    if objectives is None:
        row.update(status="failed", cause=result.cause)
    else:
        row.update(zip(("delta_h", "delta_sdot", "delta_T"), objectives))
    return row


_setups: dict = {}


def _validation_setup(config: dict) -> FlightSetup:
    key = config_hash(config)
    if key not in _setups:
        _setups[key] = FlightSetup(config)
    return _setups[key]


def validate_designs(config: dict, designs: dict, trajectories: Optional[list] = None,
                     jobs: int = 1, verbose: bool = False) -> list[dict]:
    """Fly every design on every envelope; failures become table rows, never exceptions."""
    trajectories = list(trajectories or VALIDATION_TRAJECTORIES)
    setup = _validation_setup(config)
    for name in trajectories:
        setup.check_trajectory(name)

    tasks = [(config, name, theta, traj) for name, theta in designs.items() for traj in trajectories]
    if jobs > 1 and len(tasks) > 1:
        with mp.get_context("spawn").Pool(processes=min(jobs, len(tasks))) as pool:
            rows = pool.starmap(_validate_one, tasks)
    else:
        rows = []
        for task in tasks:
            if verbose:
                print(f"   [SIM] {task[1]} {task[2]} on {task[3]}")
            rows.append(_validate_one(*task))

    if verbose:
        for row in rows:
            marker = "[OK]" if row["status"] == "ok" else "[WARN]"
            print(f"   {marker} {row['design']} / {row['trajectory']}: {row['cause'] or 'completed'}")
    return rows
