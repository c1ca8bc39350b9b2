"""Command-line entry point: ``inertial-init <subcommand> ...``.

Exit codes: 0 success / accepted, 1 check failure, 2 usage or I/O error,
3 initialization rejected. Log verbosity is read from ``INERTIAL_INIT_LOG``
(``DEBUG``, ``INFO``, ``WARNING`` (default), ``ERROR``). Numeric defaults
come from :class:`~inertial_init.dataset_io.RunConfig`; a ``--config`` YAML
file overrides them and explicit flags override the file.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import dataset_io as dio
from .errors import InertialInitError
from .evaluation import (StageTimer, WindowConfig, angle_between, check_report,
                         exhaustive_experiment, histogram_text, horn_sim3_align, timing_capture)
from .init_solver import PriorConfig, SolverConfig, UpToScaleTrajectory, apply_initialization, initialize
from .jacobian_check import BLOCK_NAMES, DEFAULT_THRESHOLD, run_check
from .manifold import random_rotation
from .preintegration import NoiseParams
from .simulator import FLIP_Z, simulate

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_REJECTED = 0, 1, 2, 3
LOG_ENV = "INERTIAL_INIT_LOG"

log = logging.getLogger("inertial_init")


class UsageError(Exception):
    """Bad flags or configuration detected after argument parsing."""


def default_scenario_path():
    return resources.files("inertial_init") / "data" / "default_scenario.yaml"


def _emit(args, doc, lines):
    if args.json:
        print(dio.dumps(doc))
    else:
        for line in lines:
            print(line)


def _seeds(text):
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty seed list")
    return vals


def _run_config(args):
    overrides = {k: getattr(args, k, None) for k in
                 ("window_length", "keyframe_rate", "stride", "scale_seeds", "prior_std",
                  "accel_threshold", "gyro_noise", "accel_noise", "gravity",
                  "refine_length", "max_iterations", "seed", "workers")}
    return dio.load_run_config(args.config, **overrides)


def _noise(cfg, dataset):
    base = dataset.noise
    return NoiseParams(cfg.gyro_noise if cfg.gyro_noise is not None else base.gyro_noise,
                       cfg.accel_noise if cfg.accel_noise is not None else base.accel_noise,
                       cfg.gravity if cfg.gravity is not None else base.gravity)


def _solver(cfg):
    return SolverConfig(max_iterations=cfg.max_iterations, scale_seeds=cfg.scale_seeds,
                        accel_threshold=cfg.accel_threshold)


# ------------------------------------------------------------------ simulate

def cmd_simulate(args):
    scenario = Path(args.scenario) if args.scenario else default_scenario_path()
    with resources.as_file(scenario) as path:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise UsageError(f"{scenario}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{scenario}: scenario must be a mapping")
    if args.seed is not None:
        doc["seed"] = args.seed
    model, cfg = dio.scenario_from_dict(doc)
    sim = simulate(model, cfg)
    out = dio.write_sim_dataset(args.output, sim, doc)
    summary = {
        "output": str(out), "duration": float(model.duration), "imu_samples": len(sim.times),
        "keyframes": len(sim.keyframe_index), "scale": cfg.scale, "seed": cfg.seed,
        "bias_gyro": cfg.bias.gyro, "bias_accel": cfg.bias.accel,
    }
    _emit(args, summary, [
        f"simulated {model.duration:.2f} s: {len(sim.times)} IMU samples, "
        f"{len(sim.keyframe_index)} keyframes, true scale {cfg.scale:.6g}, seed {cfg.seed} "
        f"-> {out}"])
    return EXIT_OK


# ------------------------------------------------------------------ init

def _window_trajectory(args, dataset, cfg):
    """Keyframes of the requested window plus known truth (scale, gravity)."""
    gt = dataset.groundtruth
    start = float(args.start) if args.start is not None else float(max(gt.t[0], dataset.imu.t[0]))
    period = 1.0 / cfg.keyframe_rate
    times = start + period * np.arange(cfg.n_keyframes)
    if times[-1] > min(gt.t[-1], dataset.imu.t[-1]) + 1e-9:
        raise UsageError(f"window [{start}, {times[-1]}] exceeds the dataset span")
    truth = {}
    traj_path = args.trajectory
    if traj_path is None and dataset.path and (Path(dataset.path) / "visual_trajectory.csv").exists():
        traj_path = Path(dataset.path) / "visual_trajectory.csv"
    if traj_path is not None:
        full = dio.load_trajectory(traj_path, dataset.origin_ns)
        idx = np.clip(np.searchsorted(full.times, times - 0.5 * period), 0, len(full) - 1)
        idx = np.unique(idx[np.abs(full.times[idx] - times) <= 0.5 * period])
        if len(idx) < 3:
            raise UsageError("front-end trajectory does not cover the window")
        traj = full.subset(idx)
        if dataset.sim_truth is not None and traj_path == Path(dataset.path) / "visual_trajectory.csv":
            truth["scale"] = float(dataset.sim_truth["scale"])
            truth["R_wg"] = np.asarray(dataset.sim_truth["R_wg"])
        source = str(traj_path)
    else:
        rng = np.random.default_rng(cfg.seed)
        scale = args.true_scale if args.true_scale is not None else \
            float(np.exp(rng.uniform(np.log(0.5), np.log(20.0))))
        R_vw = random_rotation(rng)
        idx = np.array([int(np.argmin(np.abs(gt.t - t))) for t in times])
        traj = UpToScaleTrajectory(gt.t[idx], R_vw @ gt.R[idx], gt.p[idx] @ R_vw.T / scale)
        truth["scale"] = scale
        truth["R_wg"] = R_vw @ FLIP_Z
        source = "ground-truth surrogate"
    return traj, truth, source


def cmd_init(args):
    cfg = _run_config(args)
    dataset = dio.load_dataset(args.dataset)
    noise = _noise(cfg, dataset)
    traj, truth, source = _window_trajectory(args, dataset, cfg)
    solver = _solver(cfg)
    timer = StageTimer()
    with timer.time("initialize"):
        res, _ = initialize(traj, dataset.imu, noise, solver, PriorConfig.isotropic(cfg.prior_std))
    for sr in res.seeds:
        timer.record("inertial_only_per_seed", sr.wall_ms)
    if res.accepted:
        with timer.time("map_update"):
            metric = apply_initialization(traj, res)

    st = res.state
    g = res.gravity / np.linalg.norm(res.gravity)
    doc = {
        "accepted": res.accepted, "reason": res.reason, "trajectory_source": source,
        "window": [float(traj.times[0]), float(traj.times[-1])], "n_keyframes": len(traj),
        "scale": st.scale, "gravity_direction": g,
        "gravity_angles_deg": {"azimuth": float(np.degrees(np.arctan2(g[1], g[0]))),
                               "elevation": float(np.degrees(np.arcsin(np.clip(g[2], -1, 1))))},
        "bias_gyro": st.bias.gyro, "bias_accel": st.bias.accel, "cost": res.cost,
        "excitation": res.excitation,
        "seeds": [{"seed": r.seed, "cost": r.cost, "iterations": r.iterations,
                   "converged": r.converged, "scale": r.state.scale} for r in res.seeds],
        "timings_ms": timing_capture(timer),
    }
    if "scale" in truth:
        doc["scale_true"] = truth["scale"]
        doc["scale_error_percent"] = 100.0 * abs(st.scale / truth["scale"] - 1.0)
        g_true = truth["R_wg"] @ np.array([0.0, 0.0, 1.0])
        doc["gravity_error_deg"] = angle_between(res.gravity, g_true)
    if res.accepted:
        gt = dataset.groundtruth
        idx = np.array([int(np.argmin(np.abs(gt.t - t))) for t in traj.times])
        try:
            doc["scale_error_aligned_percent"] = 100.0 * abs(
                horn_sim3_align(metric.positions, gt.p[idx]).scale - 1.0)
        except InertialInitError:
            pass

    lines = [f"{'ACCEPTED' if res.accepted else 'REJECTED'}"
             + (f": {res.reason}" if res.reason else ""),
             f"scale {st.scale:.6g}" + (f" (true {truth['scale']:.6g}, error "
                                       f"{doc['scale_error_percent']:.3f} %)" if "scale" in truth else ""),
             "gravity direction azimuth {azimuth:.3f} deg, elevation {elevation:.3f} deg".format(
                 **doc["gravity_angles_deg"])
             + (f" (error {doc['gravity_error_deg']:.4f} deg)" if "gravity_error_deg" in doc else ""),
             f"gyro bias {np.array2string(st.bias.gyro, precision=5)} rad/s, "
             f"accel bias {np.array2string(st.bias.accel, precision=4)} m/s^2",
             f"excitation {res.excitation:.4g} m/s^2, cost {res.cost:.6g}"]
    lines += [f"  seed {r.seed:g}: cost {r.cost:.6g}, {r.iterations} iterations, "
              f"{'converged' if r.converged else 'not converged'}, scale {r.state.scale:.6g}"
              for r in res.seeds]
    lines += [f"  time {k}: mean {v['mean']:.2f} ms (n={v['n']})"
              for k, v in doc["timings_ms"].items()]
    _emit(args, doc, lines)
    if args.output:
        Path(args.output).write_text(dio.dumps(doc) + "\n", encoding="utf-8")
    return EXIT_OK if res.accepted else EXIT_REJECTED


# ------------------------------------------------------------------ eval

def aggregate_line(agg):
    return (f"windows {agg['n_windows']} accepted {agg['n_accepted']} | scale error "
            f"pre {agg['mean_scale_error']:.4f} % (median {agg['median_scale_error']:.4f} %) "
            f"post {agg['mean_scale_error_refined']:.4f} % | t_Init {agg['mean_t_init']:.3f} s "
            f"| t_Tot {agg['mean_t_tot']:.3f} s")


def cmd_eval(args):
    cfg = _run_config(args)
    dataset = dio.load_dataset(args.dataset)
    noise = _noise(cfg, dataset)
    wcfg = WindowConfig(n_keyframes=cfg.n_keyframes, keyframe_rate=cfg.keyframe_rate,
                        stride=cfg.stride, refine_length=cfg.refine_length,
                        prior_std=cfg.prior_std, seed=cfg.seed)
    trajectory = (dio.load_trajectory(args.trajectory, dataset.origin_ns)
                  if args.trajectory else None)
    report = exhaustive_experiment(dataset, wcfg, _solver(cfg), noise, cfg.workers, trajectory)
    report.metadata["dataset"] = os.path.basename(os.path.normpath(args.dataset))
    report.metadata["run_config"] = {k: (list(v) if isinstance(v, tuple) else v)
                                     for k, v in asdict(cfg).items() if k != "workers"}
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    dio.write_report(report, out / "report.json", include_timings=False)
    dio.write_windows_table(report, out / "windows.csv")
    dio.write_histogram(report.histogram, out / "histogram.txt")
    timings = {f"{w.start:.6f}": w.timings_ms for w in report.windows}
    (out / "timings.json").write_text(dio.dumps(timings) + "\n", encoding="utf-8")
    _emit(args, {"output": str(out), "aggregates": report.aggregates},
          [aggregate_line(report.aggregates), f"report written to {out / 'report.json'}"])
    return EXIT_OK


# ------------------------------------------------------------------ jacobian-check

def cmd_jacobian_check(args):
    rep = run_check(args.trials, args.seed, args.threshold, corrupt=args.corrupt_block)
    lines = [f"{name:10s} worst error {err:.3e}" + ("" if err < args.threshold else "  FAIL")
             for name, err in rep.worst.items()]
    lines.append(f"{'PASS' if rep.passed else 'FAIL'}: {args.trials} trials, seed {args.seed}, "
                 f"threshold {args.threshold:g}"
                 + ("" if rep.passed else f", failing blocks: {', '.join(rep.failing())}"))
    _emit(args, rep.to_dict(), lines)
    return EXIT_OK if rep.passed else EXIT_CHECK_FAILED


# ------------------------------------------------------------------ report

def cmd_report(args):
    report = dio.read_report(args.report)
    try:
        check_report(report)
        consistent, problem = True, ""
    except InertialInitError as exc:
        consistent, problem = False, str(exc)
    doc = {"aggregates": report.aggregates, "histogram": report.histogram,
           "consistent": consistent, "problem": problem}
    lines = [aggregate_line(report.aggregates)]
    if args.histogram:
        lines.append(histogram_text(report.histogram).rstrip("\n"))
    lines.append("consistent" if consistent else f"INCONSISTENT: {problem}")
    _emit(args, doc, lines)
    return EXIT_OK if consistent else EXIT_CHECK_FAILED


# ------------------------------------------------------------------ parser

def _add_run_flags(p):
    p.add_argument("--config", help="YAML run configuration (overrides built-in defaults)")
    p.add_argument("--window-length", type=float, help="window duration in seconds")
    p.add_argument("--keyframe-rate", type=float, help="keyframe rate in Hz")
    p.add_argument("--seeds", dest="scale_seeds", type=_seeds,
                   help="comma-separated scale seeds, e.g. 1,4,16")
    p.add_argument("--prior-std", type=float, help="accelerometer-bias prior std (m/s^2)")
    p.add_argument("--accel-threshold", type=float,
                   help="rejection threshold as a fraction of gravity")
    p.add_argument("--gyro-noise", type=float, help="gyroscope noise density")
    p.add_argument("--accel-noise", type=float, help="accelerometer noise density")
    p.add_argument("--gravity", type=float, help="gravity magnitude (m/s^2)")
    p.add_argument("--max-iterations", type=int, help="solver iteration cap")
    p.add_argument("--seed", type=int, help="RNG seed for surrogate scale and orientation")
    p.add_argument("--trajectory", help="front-end keyframe trajectory CSV")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="inertial-init",
        description="Inertial-only initialization for monocular visual-inertial systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic EuRoC-style dataset")
    p.add_argument("--scenario", help="scenario YAML (default: bundled scenario)")
    p.add_argument("--output", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("init", help="run one initialization on a dataset window")
    p.add_argument("--dataset", required=True, help="dataset directory (contains mav0/)")
    p.add_argument("--start", type=float, help="window start time in seconds")
    p.add_argument("--true-scale", type=float,
                   help="scale of the ground-truth surrogate (default: random from --seed)")
    p.add_argument("--output", help="write the result as JSON")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    _add_run_flags(p)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("eval", help="exhaustive sliding-window experiment")
    p.add_argument("--dataset", required=True, help="dataset directory (contains mav0/)")
    p.add_argument("--output", required=True, help="output directory for the report")
    p.add_argument("--stride", type=float, help="seconds between window starts")
    p.add_argument("--refine-length", type=float,
                   help="refinement window in seconds (0 disables)")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: available cores)")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    _add_run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("jacobian-check", help="finite-difference check of the Jacobians")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--corrupt-block", choices=BLOCK_NAMES,
                   help="test hook: perturb one analytic block to exercise the failure path")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_jacobian_check)

    p = sub.add_parser("report", help="summarize and validate a saved report")
    p.add_argument("--report", required=True, help="report.json written by eval")
    p.add_argument("--histogram", action="store_true", help="print the scale histogram")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_report)
    return parser


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "eval" and args.workers is None:
        args.workers = os.cpu_count() or 1
    try:
        return args.func(args)
    except (UsageError, InertialInitError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"inertial-init {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
