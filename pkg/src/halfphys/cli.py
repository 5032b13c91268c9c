"""Command-line entry points: run, metrics, ablate, bench.

Exit codes: 0 ok, 2 configuration error, 3 simulation abort, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import platform
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numba
import numpy as np

from .dynamics import HalfPhysics, PositionTeleport, SimulationError, TorquePD, run
from .kinematics import MotionSequence
from .metrics import MetricsError, compute_report, mpjpe_global, object_displacement, penetration_stats
from .scenario import (
    ScenarioError,
    ScenarioFile,
    TrajectoryFormatError,
    load_scenario_file,
    read_trajectory,
    write_trajectory,
)
from .scene import SceneError

EXIT_OK, EXIT_CONFIG, EXIT_SIM, EXIT_IO = 0, 2, 3, 4
SWEEP_PARAMS = ("object_mass", "object_friction", "pjsc_lambda", "motion_speed")
LIFT_HEIGHT = 0.05  # an object counts as lifted when it ends this far (m) above where it started
CSV_COLUMNS = ("value", "displacement", "mpjpe_g", "pene_rate", "lift_success", "status")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _fail(msg: str) -> None:
    print(f"halfphys: error: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# scenario overrides


def apply_overrides(sc: ScenarioFile, mode: Optional[str], lam: Optional[float], substeps: Optional[int]) -> ScenarioFile:
    m = sc.mode
    if mode == "hp":
        m = HalfPhysics(m.pjsc_lambda if isinstance(m, HalfPhysics) else 0.0)
    elif mode == "pd":
        m = m if isinstance(m, TorquePD) else TorquePD()
    elif mode == "teleport":
        m = PositionTeleport()
    if lam is not None:
        if not isinstance(m, HalfPhysics):
            raise CliError("--lambda only applies in hp mode", EXIT_CONFIG)
        m = HalfPhysics(lam)
    config = sc.config if substeps is None else replace(sc.config, substeps=substeps)
    return replace(sc, mode=m, config=config)


def _load(path: str) -> ScenarioFile:
    try:
        return load_scenario_file(path)
    except ScenarioError as e:
        raise CliError(f"invalid scenario {path}: {e}", EXIT_CONFIG) from None
    except OSError as e:
        raise CliError(f"cannot read {path}: {e}", EXIT_IO) from None


def _simulate(sc: ScenarioFile):
    try:
        return run(sc.spec, sc.seq, sc.scene, sc.config, sc.mode)
    except SimulationError as e:
        raise CliError(f"simulation aborted: {e}", EXIT_SIM) from None


def _write_text(path: str, text: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    except OSError as e:
        raise CliError(f"cannot write {path}: {e}", EXIT_IO) from None


def _write_traj(traj, path: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        write_trajectory(traj, path)
    except OSError as e:
        raise CliError(f"cannot write {path}: {e}", EXIT_IO) from None


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    sc = apply_overrides(_load(args.scenario), args.mode, args.lam, args.substeps)
    t0 = time.perf_counter()
    traj = _simulate(sc)
    elapsed = time.perf_counter() - t0
    report = compute_report(traj, sc.seq, sc.spec, sc.scene, args.samples)
    traj_path = args.trajectory or sc.outputs.get("trajectory")
    metrics_path = args.metrics or sc.outputs.get("metrics")
    if traj_path:
        _write_traj(traj, traj_path)
    if metrics_path:
        _write_text(metrics_path, report.to_json())
    fps = (len(traj) - 1) / elapsed if elapsed > 0 else float("inf")
    print(
        f"frames={report.frames} mpjpe_g={report.mpjpe_g:.6g}mm mpjpe={report.mpjpe:.6g}mm "
        f"pene_rate={report.pene_rate:.2f}% depth_max={report.depth_max:.3f}mm "
        f"success={str(report.success).lower()} fps={fps:.1f}"
    )
    return EXIT_OK


def cmd_metrics(args) -> int:
    sc = _load(args.scenario)
    try:
        traj = read_trajectory(args.trajectory)
    except OSError as e:
        raise CliError(f"cannot read {args.trajectory}: {e}", EXIT_IO) from None
    except TrajectoryFormatError as e:
        raise CliError(str(e), EXIT_CONFIG) from None
    try:
        report = compute_report(traj, sc.seq, sc.spec, sc.scene, args.samples)
    except MetricsError as e:
        raise CliError(str(e), EXIT_CONFIG) from None
    text = report.to_json()
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def _time_scaled(seq: MotionSequence, speed: float) -> MotionSequence:
    """Same poses played ``speed`` times faster."""
    return MotionSequence(seq.fps * speed, seq.root_pos.copy(), seq.root_quat.copy(), seq.joint_quats.copy())


def sweep_variant(sc: ScenarioFile, param: str, value: float, target: Optional[str]) -> ScenarioFile:
    if param == "pjsc_lambda":
        if not isinstance(sc.mode, HalfPhysics):
            raise CliError("pjsc_lambda sweeps need hp mode", EXIT_CONFIG)
        return replace(sc, mode=HalfPhysics(value))
    if param == "motion_speed":
        if not value > 0:
            raise CliError("motion_speed values must be positive", EXIT_CONFIG)
        return replace(sc, seq=_time_scaled(sc.seq, value))
    idx = _target_index(sc, target)
    objs = list(sc.scene.objects)
    field_name = "mass" if param == "object_mass" else "friction"
    try:
        objs[idx] = replace(objs[idx], **{field_name: value})
        scene = replace(sc.scene, objects=objs)
    except SceneError as e:
        raise CliError(str(e), EXIT_CONFIG) from None
    return replace(sc, scene=scene)


def _target_index(sc: ScenarioFile, target: Optional[str]) -> Optional[int]:
    if not sc.scene.objects:
        return None
    if target is None:
        return 0
    try:
        return sc.scene.object_index(target)
    except KeyError:
        raise CliError(f"no object named {target!r} in scenario", EXIT_CONFIG) from None


def _value_tag(v: float) -> str:
    return repr(float(v)).replace("-", "m").replace(".", "p")


def run_sweep_value(sc: ScenarioFile, param: str, value: float, target: Optional[str], out_dir: Optional[str], samples: int):
    """One CSV row (as a dict); simulation failures are reported in ``status``."""
    row = {"value": value, "displacement": "", "mpjpe_g": "", "pene_rate": "", "lift_success": "", "status": "ok"}
    try:
        variant = sweep_variant(sc, param, value, target)
        traj = run(variant.spec, variant.seq, variant.scene, variant.config, variant.mode)
    except (SimulationError, CliError, ValueError) as e:
        row["status"] = f"error: {e}"
        return row
    idx = _target_index(sc, target)
    if idx is not None:
        row["displacement"] = object_displacement(traj, idx)
        z = traj.object_positions(idx)[:, 2]
        row["lift_success"] = bool(z[-1] - z[0] >= LIFT_HEIGHT)
    row["mpjpe_g"] = mpjpe_global(traj, variant.seq, variant.spec)
    row["pene_rate"] = penetration_stats(traj, variant.spec, variant.scene, samples)[0]
    if out_dir:
        _write_traj(traj, os.path.join(out_dir, f"traj_{param}_{_value_tag(value)}.jsonl"))
    return row


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _workers(n: int) -> int:
    env = os.environ.get("HALFPHYS_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise CliError(f"HALFPHYS_THREADS must be an integer, got {env!r}", EXIT_CONFIG) from None
    return max(1, min(n, cap))


def cmd_ablate(args) -> int:
    sc = _load(args.scenario)
    try:
        values = sorted(float(v) for v in args.values.split(","))
    except ValueError:
        raise CliError(f"--values must be a comma-separated list of numbers, got {args.values!r}", EXIT_CONFIG) from None
    if not values:
        raise CliError("--values is empty", EXIT_CONFIG)
    if args.param in ("object_mass", "object_friction"):
        if not sc.scene.objects:
            raise CliError(f"{args.param} sweeps need an object in the scene", EXIT_CONFIG)
        _target_index(sc, args.target)
    if args.out_dir:
        try:
            Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise CliError(f"cannot create {args.out_dir}: {e}", EXIT_IO) from None
    with ThreadPoolExecutor(max_workers=_workers(len(values))) as pool:
        futures = [
            pool.submit(run_sweep_value, sc, args.param, v, args.target, args.out_dir, args.samples) for v in values
        ]
        rows = [f.result() for f in futures]
    text = sweep_csv(rows)
    if args.csv:
        _write_text(args.csv, text)
    sys.stdout.write(text)
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_SIM


def percentile(sorted_vals: list[float], q: float) -> float:
    """Linear-interpolated percentile of an ascending list, q in [0, 100]."""
    return float(np.percentile(np.asarray(sorted_vals), q))


def hardware_info() -> dict:
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "cpu_count": os.cpu_count(),
        "system": f"{platform.system()} {platform.release()}",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
    }


def bench(sc: ScenarioFile, repeats: int) -> dict:
    # the first run also triggers (cached) kernel compilation and is not timed
    _simulate(sc)
    steps = sc.seq.frame_count - 1
    fps = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        _simulate(sc)
        fps.append(steps / (time.perf_counter() - t0))
    s = sorted(fps)
    return {
        "frames": steps,
        "repeats": repeats,
        "fps": fps,
        "median": statistics.median(s),
        "p10": percentile(s, 10),
        "p90": percentile(s, 90),
        "hardware": hardware_info(),
    }


def cmd_bench(args) -> int:
    if args.repeats < 1:
        raise CliError("--repeats must be at least 1", EXIT_CONFIG)
    sc = apply_overrides(_load(args.scenario), args.mode, args.lam, args.substeps)
    res = bench(sc, args.repeats)
    hw = res["hardware"]
    print(f"frames per run: {res['frames']}, repeats: {res['repeats']}")
    print("fps per run: " + ", ".join(f"{v:.1f}" for v in res["fps"]))
    print(f"median {res['median']:.1f} fps  p10 {res['p10']:.1f}  p90 {res['p90']:.1f}")
    print(
        f"hardware: {hw['processor']} ({hw['machine']}, {hw['cpu_count']} cpus), {hw['system']}, "
        f"python {hw['python']}, numpy {hw['numpy']}, numba {hw['numba']}"
    )
    if args.json:
        _write_text(args.json, json.dumps(res, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("hp", "pd", "teleport"), help="override the control mode")
    p.add_argument("--lambda", dest="lam", type=float, help="override the PJSC gain (hp mode)")
    p.add_argument("--substeps", type=int, help="override the number of substeps per frame")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="halfphys", description="velocity-driven half-physics simulation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario, write trajectory and metrics")
    p.add_argument("scenario")
    _add_overrides(p)
    p.add_argument("--trajectory", help="trajectory output path (JSON lines)")
    p.add_argument("--metrics", help="metrics output path (JSON)")
    p.add_argument("--samples", type=int, default=32, help="surface samples per link for penetration")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics", help="re-score a stored trajectory")
    p.add_argument("trajectory")
    p.add_argument("--scenario", required=True, help="scenario providing body, motion and scene")
    p.add_argument("--out", help="also write the report here")
    p.add_argument("--samples", type=int, default=32)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("ablate", help="sweep one physical factor")
    p.add_argument("scenario")
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--target", help="object name for object_* sweeps (default: first object)")
    p.add_argument("--out-dir", help="directory for per-value trajectories")
    p.add_argument("--csv", help="CSV output path (also printed)")
    p.add_argument("--samples", type=int, default=32)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="measure simulated frames per second")
    p.add_argument("scenario")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--json", help="write timings and hardware info here")
    _add_overrides(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        _fail(str(e))
        return e.code
    except MetricsError as e:
        _fail(str(e))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
