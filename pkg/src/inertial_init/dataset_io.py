"""EuRoC-style dataset ingestion, scenario/run configuration and report persistence.

Directory layout (EuRoC ASL)::

    <root>/mav0/imu0/data.csv
    <root>/mav0/imu0/sensor.yaml                      (optional noise + T_BS)
    <root>/mav0/state_groundtruth_estimate0/data.csv

Simulated datasets use the same layout plus ``sim_truth.json`` and
``visual_trajectory.csv`` at the root.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .errors import InvalidData, InvalidInput, ParseError, UnsupportedVersion
from .evaluation import ExperimentReport, WindowReport, WINDOW_COLUMNS, histogram_text
from .init_solver import UpToScaleTrajectory
from .manifold import quat_to_rot, rot_to_quat
from .preintegration import DEFAULT_GRAVITY, BiasState, ImuStream, NoiseParams
from .simulator import SimConfig, TrajectoryModel

log = logging.getLogger(__name__)

REPORT_FORMAT = "inertial-init-report"
REPORT_VERSION = 1

IMU_HEADER = ("#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],"
              "a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]")
GT_HEADER = ("#timestamp, p_RS_R_x [m], p_RS_R_y [m], p_RS_R_z [m], q_RS_w [], q_RS_x [], "
             "q_RS_y [], q_RS_z [], v_RS_R_x [m s^-1], v_RS_R_y [m s^-1], v_RS_R_z [m s^-1], "
             "b_w_RS_S_x [rad s^-1], b_w_RS_S_y [rad s^-1], b_w_RS_S_z [rad s^-1], "
             "b_a_RS_S_x [m s^-2], b_a_RS_S_y [m s^-2], b_a_RS_S_z [m s^-2]")
TRAJ_HEADER = "#timestamp [ns], p_x, p_y, p_z, q_w, q_x, q_y, q_z"


# ------------------------------------------------------------------ CSV parsing

def _read_rows(path, n_cols):
    """Parse a EuRoC CSV into (int ns timestamps, float matrix); every failure is located."""
    path = Path(path)
    stamps, rows = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = [p.strip() for p in text.split(",")]
            if len(parts) != n_cols:
                raise ParseError(f"expected {n_cols} columns, found {len(parts)}", lineno, path)
            try:
                ns = int(parts[0])
                vals = [float(p) for p in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"malformed value ({exc})", lineno, path) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", lineno, path)
            if stamps and ns <= stamps[-1][0]:
                raise InvalidData("timestamps not strictly increasing", lineno, path)
            stamps.append((ns, lineno))
            rows.append(vals)
    if not rows:
        raise ParseError("no data rows", None, path)
    t_ns = np.array([s for s, _ in stamps], dtype=np.int64)
    return t_ns, np.array(rows, dtype=float)


def ns_to_seconds(t_ns, origin_ns=0):
    """Exact integer offset, then one correctly rounded int / int division.

    Rounding is monotone, so ordering is preserved (ties only when two stamps
    are closer than the float spacing at that magnitude).
    """
    origin = int(origin_ns)
    return np.array([(int(n) - origin) / 1_000_000_000 for n in t_ns], dtype=float)


def load_euroc_imu(path, origin_ns=0):
    """IMU stream from ``imu0/data.csv``; the stream carries ``t_ns`` as well.

    Times in seconds are measured from ``origin_ns``.
    """
    t_ns, rows = _read_rows(path, 7)
    stream = ImuStream(ns_to_seconds(t_ns, origin_ns), rows[:, 0:3], rows[:, 3:6])
    stream.t_ns = t_ns
    log.info("loaded %d IMU rows from %s", len(t_ns), path)
    return stream


def write_euroc_imu(path, stream, t_ns=None):
    t_ns = getattr(stream, "t_ns", None) if t_ns is None else t_ns
    if t_ns is None:
        t_ns = np.round(stream.t * 1e9).astype(np.int64)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(IMU_HEADER + "\n")
        for n, w, a in zip(t_ns, stream.gyro, stream.accel):
            fh.write(",".join([str(int(n))] + [repr(float(x)) for x in (*w, *a)]) + "\n")


@dataclass
class GroundTruth:
    t: np.ndarray
    t_ns: np.ndarray
    p: np.ndarray
    q: np.ndarray   # (w, x, y, z), normalized
    R: np.ndarray
    v: np.ndarray
    bg: np.ndarray | None = None
    ba: np.ndarray | None = None


def load_euroc_groundtruth(path, origin_ns=0):
    t_ns, rows = _read_rows(path, 17)
    q = rows[:, 3:7].copy()
    norms = np.linalg.norm(q, axis=1)
    if np.any(norms == 0):
        raise InvalidData("zero quaternion", None, path)
    # rows that are already unit length are kept bit-for-bit
    off = np.abs(norms - 1.0) > 4 * np.finfo(float).eps
    q[off] /= norms[off, None]
    R = np.stack([quat_to_rot(x) for x in q])
    return GroundTruth(ns_to_seconds(t_ns, origin_ns), t_ns, rows[:, 0:3], q, R, rows[:, 7:10],
                       rows[:, 10:13], rows[:, 13:16])


def write_euroc_groundtruth(path, gt):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    n = len(gt.t_ns)
    bg = np.zeros((n, 3)) if gt.bg is None else gt.bg
    ba = np.zeros((n, 3)) if gt.ba is None else gt.ba
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(GT_HEADER + "\n")
        for k in range(n):
            vals = (*gt.p[k], *gt.q[k], *gt.v[k], *bg[k], *ba[k])
            fh.write(",".join([str(int(gt.t_ns[k]))] + [repr(float(x)) for x in vals]) + "\n")


def load_trajectory(path, origin_ns=0):
    """Front-end keyframe trajectory: ``timestamp [ns], p(3), q(w, x, y, z)``.

    Pass the dataset's ``origin_ns`` so both share one time axis.
    """
    t_ns, rows = _read_rows(path, 8)
    R = np.stack([quat_to_rot(q) for q in rows[:, 3:7]])
    return UpToScaleTrajectory(ns_to_seconds(t_ns, origin_ns), R, rows[:, 0:3])


def write_trajectory(path, traj, t_ns=None):
    if t_ns is None:
        t_ns = np.round(traj.times * 1e9).astype(np.int64)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRAJ_HEADER + "\n")
        for n, p, R in zip(t_ns, traj.positions, traj.rotations):
            vals = (*p, *rot_to_quat(R))
            fh.write(",".join([str(int(n))] + [repr(float(x)) for x in vals]) + "\n")


# ------------------------------------------------------------------ dataset bundle

@dataclass
class DatasetBundle:
    imu: ImuStream
    groundtruth: GroundTruth
    noise: NoiseParams = field(default_factory=NoiseParams)
    extrinsic: np.ndarray | None = None
    path: str | None = None
    sim_truth: dict | None = None
    origin_ns: int = 0   # timestamp (ns) that maps to t = 0 s


def apply_extrinsic(gt, T_bs):
    """Express ground-truth states at a sensor rigidly attached by ``T_bs`` (4x4)."""
    T_bs = np.asarray(T_bs, dtype=float)
    Rbs, tbs = T_bs[:3, :3], T_bs[:3, 3]
    R = gt.R @ Rbs
    p = gt.p + np.einsum("nij,j->ni", gt.R, tbs)
    v = gt.v
    if np.any(tbs != 0) and len(gt.t) > 1:
        v = np.gradient(p, gt.t, axis=0)
    q = np.stack([rot_to_quat(x) for x in R])
    return GroundTruth(gt.t, gt.t_ns, p, q, R, v, gt.bg, gt.ba)


def _sensor_yaml(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    noise = NoiseParams(
        gyro_noise=float(doc.get("gyroscope_noise_density", NoiseParams.gyro_noise)),
        accel_noise=float(doc.get("accelerometer_noise_density", NoiseParams.accel_noise)),
        gravity=float(doc.get("gravity", DEFAULT_GRAVITY)),
    )
    T = doc.get("T_BS")
    T_bs = None
    if isinstance(T, dict) and "data" in T:
        T_bs = np.asarray(T["data"], dtype=float).reshape(4, 4)
    return noise, T_bs


def _first_stamp(path):
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            text = line.strip()
            if text and not text.startswith("#"):
                try:
                    return int(text.split(",")[0])
                except ValueError:
                    return None
    return None


def load_dataset(root, extrinsic=None, noise=None, origin_ns=None):
    """Load ``<root>/mav0`` (EuRoC ASL layout).

    Both streams are timed in seconds from a shared origin (default: the
    earliest first timestamp), which keeps sub-microsecond resolution for
    epoch-based nanosecond stamps. ``extrinsic`` (4x4), when given, is
    applied to the ground-truth states.
    The ``T_BS`` of the IMU sensor.yaml is only recorded, since EuRoC ground
    truth is already expressed in the IMU frame.
    """
    root = Path(root)
    mav = root / "mav0"
    imu_csv = mav / "imu0" / "data.csv"
    gt_csv = mav / "state_groundtruth_estimate0" / "data.csv"
    for p in (imu_csv, gt_csv):
        if not p.exists():
            raise FileNotFoundError(f"missing {p}")
    if origin_ns is None:
        firsts = [f for f in (_first_stamp(imu_csv), _first_stamp(gt_csv)) if f is not None]
        origin_ns = min(firsts) if firsts else 0
    imu = load_euroc_imu(imu_csv, origin_ns)
    gt = load_euroc_groundtruth(gt_csv, origin_ns)
    file_noise, T_bs = NoiseParams(), None
    if (mav / "imu0" / "sensor.yaml").exists():
        file_noise, T_bs = _sensor_yaml(mav / "imu0" / "sensor.yaml")
    if extrinsic is not None:
        gt = apply_extrinsic(gt, extrinsic)
    sim_truth = None
    if (root / "sim_truth.json").exists():
        sim_truth = json.loads((root / "sim_truth.json").read_text())
    return DatasetBundle(imu, gt, noise or file_noise,
                         extrinsic if extrinsic is not None else T_bs, str(root), sim_truth,
                         int(origin_ns))


def bundle_from_sim(sim):
    """In-memory :class:`DatasetBundle` equivalent to writing and loading ``sim``."""
    cfg = sim.config
    t_ns = np.round(sim.times * 1e9).astype(np.int64)
    n = len(sim.times)
    gt = GroundTruth(sim.times, t_ns, sim.p, np.stack([rot_to_quat(R) for R in sim.R]), sim.R,
                     sim.v, np.tile(cfg.bias.gyro, (n, 1)), np.tile(cfg.bias.accel, (n, 1)))
    imu = ImuStream(sim.imu.t, sim.imu.gyro, sim.imu.accel)
    imu.t_ns = t_ns
    return DatasetBundle(imu, gt, cfg.noise)


def write_sim_dataset(root, sim, scenario=None):
    """Write a :class:`~inertial_init.simulator.SimOutput` in the EuRoC layout."""
    root = Path(root)
    mav = root / "mav0"
    cfg = sim.config
    bundle = bundle_from_sim(sim)
    t_ns = bundle.groundtruth.t_ns
    write_euroc_imu(mav / "imu0" / "data.csv", sim.imu, t_ns)
    write_euroc_groundtruth(mav / "state_groundtruth_estimate0" / "data.csv", bundle.groundtruth)
    sensor = {
        "sensor_type": "imu",
        "rate_hz": float(cfg.imu_rate),
        "gyroscope_noise_density": cfg.noise.gyro_noise,
        "accelerometer_noise_density": cfg.noise.accel_noise,
        "gravity": cfg.noise.gravity,
        "T_BS": {"cols": 4, "rows": 4, "data": np.eye(4).reshape(-1).tolist()},
    }
    with open(mav / "imu0" / "sensor.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(sensor, fh, sort_keys=True)
    write_trajectory(root / "visual_trajectory.csv", sim.visual, t_ns[sim.keyframe_index])
    truth = {
        "scale": sim.truth.scale,
        "R_vw": sim.R_vw.tolist(),
        "R_wg": sim.truth.R_wg.tolist(),
        "bias_gyro": sim.truth.bias.gyro.tolist(),
        "bias_accel": sim.truth.bias.accel.tolist(),
        "keyframe_times_ns": [int(x) for x in t_ns[sim.keyframe_index]],
        "velocities": sim.truth.velocities.tolist(),
        "noisy": cfg.noisy,
        "seed": cfg.seed,
        "scenario": scenario,
    }
    (root / "sim_truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
    return root


# ------------------------------------------------------------------ scenarios

def model_to_dict(model):
    return {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
            for k, v in asdict(model).items()}


def scenario_from_dict(doc):
    """Build ``(TrajectoryModel, SimConfig)`` from a scenario mapping.

    Either ``model`` gives explicit coefficients, or ``motion`` names a preset
    (``excited``, ``degenerate``, ``static``) generated from ``seed``.
    """
    from .manifold import random_rotation
    from .simulator import random_bias, random_model

    if not isinstance(doc, dict):
        raise InvalidInput("scenario must be a mapping")
    known = {"duration", "imu_rate", "keyframe_rate", "scale", "bias_gyro", "bias_accel",
             "random_bias", "noise", "noisy", "R_vw", "seed", "motion", "model"}
    unknown = set(doc) - known
    if unknown:
        raise InvalidInput(f"unknown scenario keys: {sorted(unknown)}")
    seed = int(doc.get("seed", 0))
    rng = np.random.default_rng(seed)
    duration = float(doc.get("duration", 60.0))
    if "model" in doc:
        model = TrajectoryModel(duration=duration, **doc["model"])
    else:
        model = random_model(rng, duration, doc.get("motion", "excited"))
    nd = doc.get("noise", {}) or {}
    noise = NoiseParams(float(nd.get("gyro", NoiseParams.gyro_noise)),
                        float(nd.get("accel", NoiseParams.accel_noise)),
                        float(nd.get("gravity", DEFAULT_GRAVITY)))
    if doc.get("random_bias", False):
        bias = random_bias(rng)
    else:
        bias = BiasState(doc.get("bias_gyro", [0, 0, 0]), doc.get("bias_accel", [0, 0, 0]))
    R_vw = doc.get("R_vw")
    R_vw = random_rotation(rng) if R_vw is None else np.asarray(R_vw, dtype=float)
    cfg = SimConfig(imu_rate=float(doc.get("imu_rate", 200.0)),
                    keyframe_rate=float(doc.get("keyframe_rate", 4.0)),
                    scale=float(doc.get("scale", 1.0)), bias=bias, noise=noise,
                    noisy=bool(doc.get("noisy", True)), R_vw=R_vw, seed=seed)
    return model, cfg


def load_scenario(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise InvalidInput(f"{path}: {exc}") from None
    return scenario_from_dict(doc)


# ------------------------------------------------------------------ run config

@dataclass
class RunConfig:
    """Experiment settings; built-ins < config file < command-line flags."""

    window_length: float = 2.25
    keyframe_rate: float = 4.0
    stride: float = 0.5
    scale_seeds: tuple = (1.0, 4.0, 16.0)
    prior_std: float = 0.1
    accel_threshold: float = 0.005
    gyro_noise: float | None = None
    accel_noise: float | None = None
    gravity: float | None = None
    refine_length: float = 10.0
    max_iterations: int = 50
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.scale_seeds = tuple(float(s) for s in self.scale_seeds)
        for name in ("window_length", "keyframe_rate", "stride", "prior_std"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"{name} must be positive")
        if self.refine_length < 0 or self.accel_threshold < 0:
            raise InvalidInput("refine_length and accel_threshold must be non-negative")
        if not self.scale_seeds or min(self.scale_seeds) <= 0:
            raise InvalidInput("scale seeds must be positive")

    @property
    def n_keyframes(self):
        return int(round(self.window_length * self.keyframe_rate)) + 1

    def updated(self, **overrides):
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(**data)


def load_run_config(path=None, **overrides):
    data = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise InvalidInput(f"{path}: {exc}") from None
        names = {f.name for f in fields(RunConfig)}
        unknown = set(data) - names
        if unknown:
            raise InvalidInput(f"unknown run-config keys: {sorted(unknown)}")
    return RunConfig(**data).updated(**overrides)


# ------------------------------------------------------------------ reports

def _window_to_dict(w, include_timings):
    d = asdict(w)
    if not include_timings:
        d.pop("timings_ms")
    return d


def report_to_dict(report, include_timings=True):
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "metadata": report.metadata,
        "aggregates": report.aggregates,
        "histogram": report.histogram,
        "windows": [_window_to_dict(w, include_timings) for w in report.windows],
    }


def to_strict_json(obj):
    """Replace non-finite floats by ``None`` so the output is standard JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: to_strict_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_strict_json(v) for v in obj]
    if isinstance(obj, np.generic):
        return to_strict_json(obj.item())
    if isinstance(obj, np.ndarray):
        return to_strict_json(obj.tolist())
    return obj


def dumps(obj, indent=1):
    return json.dumps(to_strict_json(obj), indent=indent, sort_keys=True, allow_nan=False)


_FLOAT_FIELDS = {f.name for f in fields(WindowReport) if f.type in ("float", float)}


def _nan_floats(d, keys):
    return {k: (float("nan") if v is None and k in keys else v) for k, v in d.items()}


def write_report(report, path, include_timings=True):
    """Standard JSON; floats keep full precision and missing values are ``null``."""
    Path(path).write_text(dumps(report_to_dict(report, include_timings)) + "\n",
                          encoding="utf-8")


def read_report(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != REPORT_FORMAT:
        raise UnsupportedVersion(f"{path}: not an {REPORT_FORMAT} document")
    if doc.get("version") != REPORT_VERSION:
        raise UnsupportedVersion(f"{path}: report version {doc.get('version')!r}, "
                                 f"supported {REPORT_VERSION}")
    windows = [WindowReport(**_nan_floats(w, _FLOAT_FIELDS)) for w in doc.get("windows", [])]
    agg = doc.get("aggregates", {})
    return ExperimentReport(windows, _nan_floats(agg, set(agg)), doc.get("histogram", {}),
                            doc.get("metadata", {}))


def write_windows_table(report, path):
    """One CSV record per window, columns in ``WINDOW_COLUMNS`` order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(WINDOW_COLUMNS) + "\n")
        for w in report.windows:
            vals = []
            for c in WINDOW_COLUMNS:
                v = getattr(w, c)
                if c == "reason":
                    vals.append('"' + str(v).replace('"', "'") + '"')
                elif isinstance(v, bool):
                    vals.append(str(int(v)))
                else:
                    vals.append(repr(float(v)) if isinstance(v, float) else str(v))
            fh.write(",".join(vals) + "\n")


def write_histogram(hist, path):
    Path(path).write_text(histogram_text(hist), encoding="utf-8")
