"""Jet Co-Design - Main Entry Point.

Co-design the jet interfaces of a jet-powered humanoid: every candidate
bracket geometry passes a structural check before it is flown in
closed-loop simulation, and NSGA-II searches the design grid for the
best tracking/thrust trade-offs.

Usage:
    python main.py optimize                          # Full NSGA-II run
    python main.py optimize --seed 7 --jobs 4        # Reseeded, 4 workers
    python main.py validate                          # Table designs x 5 envelopes
    python main.py fem-check --design original       # Safety factor of one design
    python main.py simulate --theta 1,48,100,130 --trajectory traj2
    python main.py export-model --design optim3 --output optim3.urdf
"""

import argparse
import io
import sys
from pathlib import Path

# Fix Windows console encoding
if sys.platform == "win32":
    sys.stdout = io.TextIOWrapper(sys.stdout.buffer, encoding='utf-8', errors='replace')
    sys.stderr = io.TextIOWrapper(sys.stderr.buffer, encoding='utf-8', errors='replace')

from src.config import (
    DEFAULT_CONFIG_PATH,
    SUMMARY_HEADERS,
    VALIDATION_HEADERS,
    VALIDATION_TRAJECTORIES,
    ConfigError,
    config_hash,
    load_run_config,
)
from src.exporter import Manifest, write_csv, write_json, write_jsonl
from src.geometry import (
    DESIGN_LIBRARY,
    PARTS,
    GeometryConfig,
    GeometryError,
    GeometryParams,
    build_bracket,
    export_stl,
    require_valid,
)
from src.optimizer import OptimizationError, evolve
from src.pipeline import Evaluator, FlightSetup, archive_statistics, make_gate, optimizer_config, validate_designs
from src.robot_model import ModelError, emit_model, load_model
from src.simulation import write_log_csv
from src.structural import convergence_change, dump_stress_csv, format_sf, mesh_convergence
from src.trajectory import TrajectoryError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def parse_theta(text: str) -> GeometryParams:
    """A design name from the library or four comma-separated integers."""
    if text in DESIGN_LIBRARY:
        return DESIGN_LIBRARY[text]
    try:
        theta = GeometryParams.from_sequence(int(v) for v in text.split(","))
    except ValueError as e:
        raise GeometryError(f"Bad design '{text}': expected a library name or angle,distance,offset,length") from e
    require_valid(theta, on_grid=False)
    return theta


def _design(args) -> tuple[str, GeometryParams]:
    text = args.theta or args.design or "original"
    return text, parse_theta(text)


def _out_dir(config: dict) -> Path:
    path = Path(config["output_dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_optimize(args, config: dict, manifest: Manifest) -> int:
    out = _out_dir(config)
    settings = optimizer_config(config)
    verbose = not args.quiet

    print(f"\n[OPTIM] Population {settings.population_size}, {settings.generations} generations, seed {settings.seed}")
    evaluator = Evaluator(config, archive_path=out / "archive.jsonl", manifest=manifest,
                          jobs=config["jobs"], verbose=verbose)

    def progress(generation, population):
        if not verbose:
            return
        feasible = sum(1 for ind in population if ind.feasible)
        front = sum(1 for ind in population if ind.feasible and ind.rank == 0)
        print(f"[GEN {generation}] {feasible}/{len(population)} feasible, front {front}, "
              f"{evaluator.gate_calls} gate / {evaluator.sim_calls} flight evaluations")

    try:
        result = evolve(settings, evaluator.evaluate_many, progress, evaluator.archive)
    except OptimizationError as e:
        print(f"   [ERROR] {e}")
        return EXIT_FAILURE

    front = result.front
    front_thetas = set(front.thetas())
    write_jsonl(out / "front.jsonl", [ind.to_record() for ind in front.members], manifest)
    rows = []
    for ind in result.archive:
        objectives = ind.objectives or (None, None, None)
        rows.append({
            **ind.theta.as_dict(),
            "delta_h": objectives[0], "delta_sdot": objectives[1], "delta_T": objectives[2],
            "sf": ind.sf, "feasible": ind.feasible, "rank": 0 if ind.theta in front_thetas else None,
        })
    write_csv(out / "summary.csv", rows, SUMMARY_HEADERS, manifest)

    stats = archive_statistics(result.archive, len(front))
    write_json(out / "run.json", {"config": config, "counters": stats}, manifest)

    print(f"\n[STATS] Statistics:")
    print(f"   Designs evaluated: {stats['evaluations']}")
    print(f"   Feasible: {stats['feasible']}")
    print(f"   {stats['infeasible']} designs were deemed unfeasible "
          f"({stats['structural']} structural, {stats['flight']} in flight)")
    print(f"\n[DONE] Pareto front of {len(front)} designs written to {out / 'front.jsonl'}")
    return EXIT_OK


def cmd_validate(args, config: dict, manifest: Manifest) -> int:
    out = _out_dir(config)
    names = args.designs or list(DESIGN_LIBRARY)
    designs = {name: parse_theta(name) for name in names}
    trajectories = args.trajectories or VALIDATION_TRAJECTORIES
    print(f"\n[SIM] Validating {len(designs)} designs on {len(trajectories)} envelopes")

    rows = validate_designs(config, designs, trajectories, jobs=config["jobs"], verbose=not args.quiet)
    path = write_csv(out / "validation.csv", rows, VALIDATION_HEADERS, manifest)
    failed = sum(1 for row in rows if row["status"] != "ok")
    print(f"\n[DONE] {len(rows) - failed}/{len(rows)} flights completed, table in {path}")
    return EXIT_FAILURE if rows and failed == len(rows) else EXIT_OK


def cmd_fem_check(args, config: dict, manifest: Manifest) -> int:
    out = _out_dir(config) / "fem"
    label, theta = _design(args)
    gate = make_gate(config)
    gate.keep_fields = True

    print(f"\n[FEM] Structural check of {label} {theta}")
    result = gate(theta)
    for part, sf in result.per_part.items():
        print(f"   {part}: SF {format_sf(sf)}")
        if part in result.results:
            dump_stress_csv(result.meshes[part], result.results[part], out / part,
                            manifest.csv_header().rstrip("\n"))
    if args.stl:
        for part in PARTS:
            export_stl(build_bracket(theta, part, gate.geometry), out / f"{part}.stl")
    if args.convergence:
        for part in PARTS:
            levels = mesh_convergence(theta, part, gate)
            ladder = ", ".join(f"{edge * 1000:g} mm: {sigma / 1e6:.3f} MPa" for edge, sigma in levels)
            print(f"   [FEM] {part} convergence {ladder} ({100 * convergence_change(levels):.2f}% change)")

    if not result.feasible:
        print(f"   [WARN] Infeasible: {result.cause}")
        return EXIT_FAILURE
    print(f"   [OK] SF {format_sf(result.sf)} >= {gate.fem.threshold:g}")
    return EXIT_OK


def cmd_simulate(args, config: dict, manifest: Manifest) -> int:
    out = _out_dir(config)
    label, theta = _design(args)
    setup = FlightSetup(config)
    setup.check_trajectory(args.trajectory)

    print(f"\n[SIM] Flying {label} {theta} on {args.trajectory}")
    result, objectives = setup.fly(theta, args.trajectory)
    if result.log is not None:
        write_log_csv(result.log, out / f"sim_{args.trajectory}.csv", manifest.csv_header())
    payload = {"design": theta.as_dict(), "trajectory": args.trajectory,
               "success": result.success, "cause": result.cause, "steps": result.steps}
    if objectives is not None:
        payload.update(zip(("delta_h", "delta_sdot", "delta_T"), objectives))
    write_json(out / f"fitness_{args.trajectory}.json", payload, manifest)

    if not result.success:
        print(f"   [ERROR] {result.cause}")
        return EXIT_FAILURE
    print(f"   [OK] {result.steps} steps, fitness " + ", ".join(f"{v:.6g}" for v in objectives))
    return EXIT_OK


def cmd_export_model(args, config: dict, manifest: Manifest) -> int:
    label, theta = _design(args)
    path = Path(args.output) if args.output else _out_dir(config) / f"model_{'_'.join(map(str, theta.as_tuple()))}.urdf"
    emit_model(load_model(config["model"]), theta, path, GeometryConfig.from_dict(config.get("geometry")))
    print(f"\n[DONE] Model for {label} {theta} written to {path}")
    return EXIT_OK


COMMANDS = {
    "optimize": cmd_optimize,
    "validate": cmd_validate,
    "fem-check": cmd_fem_check,
    "simulate": cmd_simulate,
    "export-model": cmd_export_model,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", type=Path, default=None,
        help=f"Run config JSON merged over the defaults (default: {DEFAULT_CONFIG_PATH})"
    )
    common.add_argument("--seed", type=int, default=None, help="Random seed override")
    common.add_argument("--jobs", type=int, default=None, help="Worker processes for evaluation maps")
    common.add_argument("--out", type=str, default=None, help="Output directory override")
    common.add_argument("--quiet", action="store_true", help="Only print stage summaries")

    design = argparse.ArgumentParser(add_help=False)
    group = design.add_mutually_exclusive_group()
    group.add_argument("--theta", help="Design as angle,distance,offset,length")
    group.add_argument("--design", choices=sorted(DESIGN_LIBRARY), help="Named design (default: original)")

    parser = argparse.ArgumentParser(description="Co-design the jet interfaces of a flying humanoid")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("optimize", parents=[common], help="Run the constrained NSGA-II search")
    validate = sub.add_parser("validate", parents=[common], help="Fly designs on the validation envelopes")
    validate.add_argument("--designs", nargs="+", help="Library names or angle,distance,offset,length values")
    validate.add_argument("--trajectories", nargs="+", help="Envelope names (default: traj1..traj5)")
    fem = sub.add_parser("fem-check", parents=[common, design], help="Safety factor of one design")
    fem.add_argument("--stl", action="store_true", help="Also export both brackets as STL")
    fem.add_argument("--convergence", action="store_true", help="Report sigma_max at every configured resolution")
    simulate = sub.add_parser("simulate", parents=[common, design], help="One closed-loop flight")
    simulate.add_argument("--trajectory", default="traj1", help="Envelope name (default: traj1)")
    export = sub.add_parser("export-model", parents=[common, design], help="Write the robot model of a design")
    export.add_argument("--output", help="Model file path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    print("=" * 50)
    print("JET CO-DESIGN")
    print("=" * 50)

    try:
        config = load_run_config(args.config, {"seed": args.seed, "jobs": args.jobs, "output_dir": args.out})
        manifest = Manifest.from_config(config, config_hash(config), args.command)
        code = COMMANDS[args.command](args, config, manifest)
    except (ConfigError, GeometryError, ModelError, TrajectoryError) as e:
        print(f"\n[ERROR] {e}", file=sys.stderr)
        code = EXIT_USAGE

    print("\n" + "=" * 50)
    return code


if __name__ == "__main__":
    sys.exit(main())
