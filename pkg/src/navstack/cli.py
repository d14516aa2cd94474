"""``navstack`` command line: run, map, compare, validate.

Exit codes: 0 success (goal reached), 1 error, 2 the run hit t_max.
Every output directory receives ``manifest.json``; passing a manifest to
``navstack run`` repeats the recorded command.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, plots
from .scan import (
    DEFAULT_BAND,
    ObstacleMap,
    ScanConfig,
    TiltMount,
    gate_scene,
    read_point_cloud,
    simulate_tilt_scan,
    slice_reduce,
    table_scene,
    with_raster,
    write_obstacle_map,
    write_pgm,
    write_point_cloud,
)
from .geometry import Pose
from .scenario import SCHEMA, ScenarioError, load_scenario, scenario_from_dict, scenario_to_dict
from .sim import (
    EstimatorKind,
    ScenarioDivergence,
    Status,
    default_configs,
    derived_seed,
    monte_carlo,
    run_scenario,
)

EXIT_OK, EXIT_ERROR, EXIT_T_MAX = 0, 1, 2

# synthetic mapping scenes: world factory and the pose the scan is taken from
SCENES = {
    "table": (table_scene, Pose(0.0, 0.0, 0.0)),
    "gate": (gate_scene, Pose(0.0, 0.0, math.pi / 2)),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage, which here means t_max."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _out_dir(arg: str | None, name: str) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get("NAVSTACK_OUT", "out")) / name


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, payload: dict, seed: int | None, files: list[str]) -> None:
    manifest = {
        "command": command,
        "tool": "navstack",
        "version": __version__,
        "seed": seed,
        "output_dir": str(out),
        **payload,
        "files": {f: _sha256(out / f) for f in sorted(files)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _warn(msg: str) -> None:
    print(f"navstack: warning: {msg}", file=sys.stderr)


# --- run ---------------------------------------------------------------------

def _apply_overrides(s, args):
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "t_max", None) is not None:
        changes["t_max"] = args.t_max
    if getattr(args, "dt", None) is not None:
        changes["dt"] = args.dt
    if not changes:
        return s
    try:
        return replace(s, **changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def run_to_dir(s, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    files = ["trajectory.csv", "trajectory.svg", "velocity.svg", "lyapunov.svg"]
    try:
        log = run_scenario(s)
        code = EXIT_OK if log.status is Status.GOAL else EXIT_T_MAX
        failure = None
    except ScenarioDivergence as exc:
        log, code, failure = exc.log, EXIT_ERROR, str(exc)
    log.write_csv(out / "trajectory.csv")
    map_points = None
    if log.obstacle_map is not None:
        write_obstacle_map(out / "map.txt", log.obstacle_map)
        files.append("map.txt")
        map_points = plots.read_xy(out / "map.txt")
    data = plots.read_log_csv(out / "trajectory.csv")
    if len(data):
        (out / "trajectory.svg").write_text(plots.trajectory_svg(data, map_points, f"{s.name}: trajectory"))
        (out / "velocity.svg").write_text(plots.velocity_svg(data, f"{s.name}: v and omega"))
        (out / "lyapunov.svg").write_text(plots.lyapunov_svg(data, f"{s.name}: V"))
    else:
        files = [f for f in files if not f.endswith(".svg")]
    status = "error" if failure else log.status.value
    _write_manifest(out, "run", {"status": status, "scenario": scenario_to_dict(s)}, s.seed, files)
    last = log.records[-1] if log.records else None
    if failure:
        print(f"navstack: error: {failure} (partial log in {out})", file=sys.stderr)
    elif last is not None:
        print(f"{s.name}: {status} at t={last.t:.2f}s rho={last.rho:.4f} "
              f"alpha={math.degrees(last.alpha):.2f}deg phi={math.degrees(last.phi):.2f}deg -> {out}")
    return code


def cmd_run(args) -> int:
    path = Path(args.scenario)
    manifest = _maybe_manifest(path)
    if manifest is not None:
        return _replay(manifest, args)
    s = _apply_overrides(load_scenario(path), args)
    return run_to_dir(s, _out_dir(args.out, s.name))


def _maybe_manifest(path: Path):
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return None
    if isinstance(doc, dict) and "command" in doc and doc.get("tool") == "navstack":
        return doc
    return None


def _replay(manifest: dict, args) -> int:
    command = manifest["command"]
    source = str(args.scenario)
    if command == "map":
        return map_to_dir(manifest["input"], tuple(manifest["band"]), manifest["cell_size"],
                          _out_dir(args.out, "map"), base=Path(args.scenario).parent)
    s = scenario_from_dict(manifest["scenario"], source=source)
    s = _apply_overrides(s, args)
    if command == "run":
        return run_to_dir(s, _out_dir(args.out, s.name))
    if command == "compare":
        return compare_to_dir(s, manifest["n_runs"], _out_dir(args.out, s.name + "-compare"))
    raise UsageError(f"unknown manifest command {command!r}")


# --- map ---------------------------------------------------------------------

def map_to_dir(spec: dict, band, cell_size: float, out: Path, base: Path | None = None) -> int:
    lo, hi = band
    if not lo < hi:
        raise UsageError(f"--band needs z_min < z_max, got {lo} {hi}")
    if not cell_size > 0:
        raise UsageError("--cell-size must be positive")
    out.mkdir(parents=True, exist_ok=True)
    if spec["kind"] == "scene":
        factory, pose = SCENES[spec["scene"]]
        frames = simulate_tilt_scan(factory(), TiltMount(), ScanConfig(), pose)
        write_point_cloud(out / "cloud.xyz", frames)
    else:
        src = Path(spec["path"])
        if base is not None and not src.is_absolute():
            src = base / src
        if src.resolve() != (out / "cloud.xyz").resolve():
            shutil.copyfile(src, out / "cloud.xyz")
        frames = read_point_cloud(out / "cloud.xyz")
    obstacle_map = slice_reduce(frames, (lo, hi))
    write_obstacle_map(out / "map.txt", obstacle_map)
    files = ["cloud.xyz", "map.txt", "map.pgm", "map.svg"]
    if len(obstacle_map):
        write_pgm(out / "map.pgm", with_raster(obstacle_map, cell_size).raster)
    else:
        _warn("no points inside the band; the map is empty")
        (out / "map.pgm").write_text("P2\n0 0\n255\n", encoding="utf-8")
    cloud = np.array([(p.x, p.y, p.z) for f in frames for p in f.points], dtype=float).reshape(-1, 3)
    (out / "map.svg").write_text(plots.map_svg(cloud, (lo, hi), plots.read_xy(out / "map.txt")))
    recorded = dict(spec)
    if recorded["kind"] == "cloud":
        recorded["path"] = "cloud.xyz"
    _write_manifest(out, "map", {"input": recorded, "band": [lo, hi], "cell_size": cell_size}, None, files)
    print(f"map: {len(frames)} frames, {len(obstacle_map)} map points in band ({lo}, {hi}) -> {out}")
    return EXIT_OK


def cmd_map(args) -> int:
    if args.cloud is not None:
        spec = {"kind": "cloud", "path": str(args.cloud)}
        name = Path(args.cloud).stem
    else:
        spec = {"kind": "scene", "scene": args.scene}
        name = args.scene
    return map_to_dir(spec, tuple(args.band), args.cell_size, _out_dir(args.out, "map-" + name))


# --- compare -----------------------------------------------------------------

def compare_to_dir(s, n_runs: int, out: Path) -> int:
    if n_runs < 2:
        raise UsageError(f"--runs must be at least 2, got {n_runs}")
    out.mkdir(parents=True, exist_ok=True)
    configs = default_configs(s)
    summaries = monte_carlo(s, n_runs, configs)
    lines = ["estimator,n_runs,final_position_rmse,trajectory_rmse,mean_nees,goal_rate"]
    for r in summaries:
        lines.append(f"{r.label},{r.n_runs},{r.final_position_rmse!r},{r.trajectory_rmse!r},"
                     f"{r.mean_nees!r},{r.goal_rate!r}")
    (out / "rmse.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    files = ["rmse.csv", "compare.svg"]
    logs = {}
    seed = derived_seed(s.seed, 0)
    for cfg in configs:
        fname = f"first_seed_{'odometry' if cfg.kind is EstimatorKind.ODOMETRY_ONLY else 'ekf'}.csv"
        try:
            log = run_scenario(replace(s, estimator=cfg, seed=seed))
        except ScenarioDivergence as exc:
            log = exc.log
        log.write_csv(out / fname)
        files.append(fname)
        logs[cfg.label] = plots.read_log_csv(out / fname)
    (out / "compare.svg").write_text(plots.compare_svg(logs, f"{s.name}: first seed ({seed})"))
    _write_manifest(out, "compare", {"n_runs": n_runs, "scenario": scenario_to_dict(s)}, s.seed, files)
    for r in summaries:
        print(f"{r.label:<48} final RMSE {r.final_position_rmse:.5f} m  trajectory RMSE "
              f"{r.trajectory_rmse:.5f} m  NEES {r.mean_nees:.3f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    s = _apply_overrides(load_scenario(args.scenario), args)
    return compare_to_dir(s, args.runs, _out_dir(args.out, s.name + "-compare"))


# --- validate ----------------------------------------------------------------

def cmd_validate(args) -> int:
    if args.schema:
        print(json.dumps(SCHEMA, indent=2))
        return EXIT_OK
    if args.scenario is None:
        raise UsageError("validate needs a scenario file (or --schema)")
    s = load_scenario(args.scenario)
    print(f"{args.scenario}: ok ({s.name}, {len(s.goals)} goal(s), {len(s.world.obstacles)} obstacle part(s))")
    return EXIT_OK


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="navstack", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"navstack {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def overrides(sp):
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--t-max", type=float, dest="t_max", help="override the simulated time limit [s]")
        sp.add_argument("--dt", type=float, help="override the control period [s]")

    r = sub.add_parser("run", help="run a scenario (or repeat a manifest)")
    r.add_argument("scenario", help="scenario JSON or manifest.json")
    r.add_argument("--out", help="output directory (default $NAVSTACK_OUT/<name> or out/<name>)")
    overrides(r)
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("map", help="reduce a 3D scan to a 2D map")
    src = m.add_mutually_exclusive_group()
    src.add_argument("--scene", choices=sorted(SCENES), default="table", help="synthetic scene to scan")
    src.add_argument("--cloud", help="point cloud file ('x y z' lines, blank line between frames)")
    m.add_argument("--band", nargs=2, type=float, default=list(DEFAULT_BAND), metavar=("Z_MIN", "Z_MAX"),
                   help="height band in meters, endpoints excluded (default 0.8 1.2)")
    m.add_argument("--cell-size", type=float, default=0.05, dest="cell_size", help="raster cell size [m]")
    m.add_argument("--out", help="output directory")
    m.set_defaults(func=cmd_map)

    c = sub.add_parser("compare", help="Monte-Carlo comparison of odometry-only and EKF")
    c.add_argument("scenario")
    c.add_argument("--runs", type=int, default=100, help="runs per estimator (>= 2)")
    c.add_argument("--out", help="output directory")
    overrides(c)
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("validate", help="check a scenario file against the schema")
    v.add_argument("scenario", nargs="?")
    v.add_argument("--schema", action="store_true", help="print the JSON schema and exit")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"navstack: invalid scenario: {exc}", file=sys.stderr)
    except UsageError as exc:
        print(f"navstack: error: {exc}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        print(f"navstack: error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
