"""Alignment metrics and the exhaustive sliding-window experiment."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateInput, InertialInitError, InvalidInput
from .init_solver import (PriorConfig, SolverConfig, UpToScaleTrajectory, apply_initialization,
                          initialize, refine)
from .manifold import random_rotation
from .simulator import FLIP_Z

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ alignment

@dataclass(frozen=True)
class Sim3Transform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidInput("Sim(3) scale must be positive")

    def apply(self, points):
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation


def horn_sim3_align(estimated, ground_truth, with_scale=True):
    """Closed-form similarity with ``estimated ~= s R ground_truth + t``.

    Least squares over point correspondences (Umeyama's formulation of Horn's
    method) with a reflection guard.
    """
    y = np.asarray(estimated, dtype=float).reshape(-1, 3)
    x = np.asarray(ground_truth, dtype=float).reshape(-1, 3)
    if len(x) != len(y):
        raise InvalidInput("point sets differ in length")
    if len(x) < 3:
        raise DegenerateInput("alignment needs at least 3 correspondences")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    var_x = float((xc ** 2).sum()) / len(x)
    sv = np.linalg.svd(xc, compute_uv=False)
    if var_x <= 0 or sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateInput("ground-truth points are collinear or coincident")
    cov = yc.T @ xc / len(x)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_x) if with_scale else 1.0
    return Sim3Transform(s, R, my - s * R @ mx)


def scale_error(estimated, ground_truth):
    """Percent deviation of the aligned scale from one."""
    return 100.0 * abs(horn_sim3_align(estimated, ground_truth).scale - 1.0)


def associate(t_est, t_gt, max_dt):
    """Nearest-timestamp pairs within ``max_dt``; returns (est_idx, gt_idx, n_dropped)."""
    t_est = np.asarray(t_est, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    j = np.clip(np.searchsorted(t_gt, t_est), 1, max(len(t_gt) - 1, 1))
    if len(t_gt) == 1:
        j = np.zeros(len(t_est), dtype=int)
    else:
        left = j - 1
        j = np.where(np.abs(t_gt[left] - t_est) <= np.abs(t_gt[j] - t_est), left, j)
    ok = np.abs(t_gt[j] - t_est) <= max_dt
    return np.flatnonzero(ok), j[ok], int((~ok).sum())


def ate_rmse(est_t, est_p, gt_t, gt_p, mode="sim3", max_dt=None):
    """RMSE of position residuals after a Sim(3) or SE(3) alignment of gt onto est."""
    est_t = np.asarray(est_t, dtype=float)
    if max_dt is None:
        max_dt = 0.5 * float(np.median(np.diff(est_t))) if len(est_t) > 1 else 0.0
    ie, ig, _ = associate(est_t, gt_t, max_dt)
    if len(ie) == 0:
        raise InvalidInput("no timestamp associations between trajectories")
    y = np.asarray(est_p)[ie]
    x = np.asarray(gt_p)[ig]
    mode = mode.lower()
    if mode not in ("sim3", "se3"):
        raise InvalidInput(f"unknown alignment mode {mode!r}")
    T = horn_sim3_align(y, x, with_scale=(mode == "sim3"))
    d = y - T.apply(x)
    return float(np.sqrt((d ** 2).sum(axis=1).mean()))


def angle_between(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


# ------------------------------------------------------------------ timing

class StageTimer:
    """Accumulates wall-clock durations (ms) per named stage."""

    def __init__(self):
        self.samples = {}

    def record(self, stage, ms):
        self.samples.setdefault(stage, []).append(float(ms))

    def time(self, stage):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.record(stage, (time.perf_counter() - self.t0) * 1e3)

        return _Ctx()


def timing_capture(samples):
    """``{stage: {mean, median, max, n}}`` in ms from ``{stage: [ms, ...]}``."""
    if isinstance(samples, StageTimer):
        samples = samples.samples
    out = {}
    for stage, values in samples.items():
        v = np.asarray(values, dtype=float)
        if len(v) == 0:
            continue
        out[stage] = {"mean": float(v.mean()), "median": float(np.median(v)),
                      "max": float(v.max()), "n": int(len(v))}
    return out


# ------------------------------------------------------------------ reports

@dataclass
class WindowReport:
    start: float
    t_init: float
    t_tot: float = float("nan")
    accepted: bool = False
    reason: str = ""
    scale_true: float = float("nan")
    scale_est: float = float("nan")
    scale_ratio: float = float("nan")
    scale_error: float = float("nan")            # % from |s_est / s_true - 1|
    scale_error_aligned: float = float("nan")    # % from Sim(3) alignment
    scale_ratio_refined: float = float("nan")
    scale_error_refined: float = float("nan")
    gravity_error_deg: float = float("nan")
    gyro_bias_error: float = float("nan")
    accel_bias_error: float = float("nan")
    excitation: float = float("nan")
    cost: float = float("nan")
    n_keyframes: int = 0
    timings_ms: dict = field(default_factory=dict)


WINDOW_COLUMNS = [
    "start", "t_init", "t_tot", "accepted", "scale_true", "scale_est", "scale_ratio",
    "scale_error", "scale_error_aligned", "scale_ratio_refined", "scale_error_refined",
    "gravity_error_deg", "gyro_bias_error", "accel_bias_error", "excitation", "cost",
    "n_keyframes", "reason",
]


@dataclass
class ExperimentReport:
    windows: list
    aggregates: dict = field(default_factory=dict)
    histogram: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def _finite_mean(values):
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    return float(v.mean()) if len(v) else float("nan")


def _finite_median(values):
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    return float(np.median(v)) if len(v) else float("nan")


def compute_aggregates(windows):
    acc = [w for w in windows if w.accepted]
    return {
        "n_windows": len(windows),
        "n_accepted": len(acc),
        "acceptance_rate": len(acc) / len(windows) if windows else float("nan"),
        "mean_scale_error": _finite_mean([w.scale_error for w in acc]),
        "median_scale_error": _finite_median([w.scale_error for w in acc]),
        "mean_scale_error_aligned": _finite_mean([w.scale_error_aligned for w in acc]),
        "mean_scale_error_refined": _finite_mean([w.scale_error_refined for w in acc]),
        "median_scale_error_refined": _finite_median([w.scale_error_refined for w in acc]),
        "mean_gravity_error_deg": _finite_mean([w.gravity_error_deg for w in acc]),
        "mean_t_init": _finite_mean([w.t_init for w in windows]),
        "mean_t_tot": _finite_mean([w.t_tot for w in windows]),
    }


def fill_total_times(windows):
    """t_Tot: time from a window's start until the first accepted retry ends."""
    ordered = sorted(windows, key=lambda w: w.start)
    nxt = None
    for w in reversed(ordered):
        if w.accepted:
            nxt = w
        w.t_tot = (nxt.start - w.start + nxt.t_init) if nxt is not None else float("nan")
    return ordered


def scale_histogram(ratios, bin_width=0.05, upper=2.5):
    """Counts of scale ratios in bins centred on multiples of ``bin_width``.

    Centres run from 0 to ``upper``; ratios beyond the last edge go to the
    overflow count. Accepts WindowReports (accepted ones only) or plain ratios.
    """
    vals = []
    for r in ratios:
        if isinstance(r, WindowReport):
            if r.accepted and np.isfinite(r.scale_ratio):
                vals.append(r.scale_ratio)
        else:
            vals.append(float(r))
    n_bins = int(round(upper / bin_width)) + 1
    centers = np.round(np.arange(n_bins) * bin_width, 10)
    counts = np.zeros(n_bins, dtype=int)
    overflow = 0
    for v in vals:
        k = int(np.floor(v / bin_width + 0.5))
        if k < 0:
            k = 0
        if k >= n_bins:
            overflow += 1
        else:
            counts[k] += 1
    return {"bin_width": bin_width, "centers": centers.tolist(),
            "counts": counts.tolist(), "overflow": overflow}


def histogram_text(hist):
    lines = ["# bin_center count"]
    lines += [f"{c:.4f} {n}" for c, n in zip(hist["centers"], hist["counts"])]
    lines.append(f"# overflow {hist['overflow']}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ experiment

@dataclass(frozen=True)
class WindowConfig:
    n_keyframes: int = 10
    keyframe_rate: float = 4.0
    stride: float = 0.5
    refine_length: float = 10.0   # 0 disables refinement
    prior_std: float = 0.1
    seed: int = 0
    scale_range: tuple = (0.5, 20.0)

    @property
    def window_length(self):
        return (self.n_keyframes - 1) / self.keyframe_rate


def window_starts(t_first, t_last, length, stride):
    span = t_last - t_first - length
    if span < -1e-9:
        raise InvalidInput("dataset shorter than one window")
    n = 1 + int(np.floor(span / stride + 1e-9))
    return t_first + stride * np.arange(n)


def _keyframe_indices(gt_t, times, tol):
    idx = np.clip(np.searchsorted(gt_t, times), 1, len(gt_t) - 1)
    left = idx - 1
    idx = np.where(np.abs(gt_t[left] - times) <= np.abs(gt_t[idx] - times), left, idx)
    if np.any(np.abs(gt_t[idx] - times) > tol):
        return None
    return idx


def _surrogate(gt, idx, scale, R_vw):
    times = gt.t[idx]
    traj = UpToScaleTrajectory(times, R_vw @ gt.R[idx], gt.p[idx] @ R_vw.T / scale)
    return traj


def run_window(dataset, start, wcfg, solver_cfg, noise, window_index, trajectory=None):
    """One initialization attempt (plus optional refinement) and its metrics."""
    timer = StageTimer()
    gt = dataset.groundtruth
    period = 1.0 / wcfg.keyframe_rate
    times = start + period * np.arange(wcfg.n_keyframes)
    rep = WindowReport(start=float(start), t_init=float(times[-1] - times[0]),
                       n_keyframes=wcfg.n_keyframes)
    rng = np.random.default_rng([wcfg.seed, window_index])
    lo, hi = np.log(wcfg.scale_range[0]), np.log(wcfg.scale_range[1])
    s_true = float(np.exp(rng.uniform(lo, hi)))
    R_vw = random_rotation(rng)

    idx = _keyframe_indices(gt.t, times, 0.5 * period)
    if idx is None:
        rep.reason = "ground truth does not cover the window"
        return rep
    if trajectory is not None:
        ke = _keyframe_indices(trajectory.times, times, 0.5 * period)
        if ke is None:
            rep.reason = "front-end trajectory does not cover the window"
            return rep
        traj = trajectory.subset(ke)
        s_true, R_vw = float("nan"), None
    else:
        traj = _surrogate(gt, idx, s_true, R_vw)
    rep.scale_true = s_true
    prior = PriorConfig.isotropic(wcfg.prior_std)

    try:
        with timer.time("total"):
            res, preints = initialize(traj, dataset.imu, noise, solver_cfg, prior)
            for sr in res.seeds:
                timer.record("inertial_only_per_seed", sr.wall_ms)
            rep.excitation = res.excitation
            rep.cost = res.cost
            rep.accepted = res.accepted
            rep.reason = res.reason
            if res.accepted:
                with timer.time("map_update"):
                    metric = apply_initialization(traj, res)
    except InertialInitError as exc:
        rep.accepted = False
        rep.reason = f"{type(exc).__name__}: {exc}"
        rep.timings_ms = timing_capture(timer)
        return rep

    rep.scale_est = res.state.scale
    gt_p = gt.p[idx]
    if res.accepted:
        try:
            T = horn_sim3_align(metric.positions, gt_p)
            rep.scale_error_aligned = 100.0 * abs(T.scale - 1.0)
        except DegenerateInput:
            T = None
        if np.isfinite(s_true):
            rep.scale_ratio = res.state.scale / s_true
            rep.gravity_error_deg = angle_between(
                res.gravity, R_vw @ FLIP_Z @ np.array([0.0, 0.0, noise.gravity]))
        elif T is not None:
            rep.scale_ratio = T.scale
            # estimated gravity frame vs ground truth frame, via the alignment rotation
            rep.gravity_error_deg = angle_between(
                T.rotation @ np.array([0.0, 0.0, -1.0]), metric.gravity)
        rep.scale_error = 100.0 * abs(rep.scale_ratio - 1.0)
        bg = gt.bg[idx[0]] if gt.bg is not None else None
        ba = gt.ba[idx[0]] if gt.ba is not None else None
        if bg is not None:
            rep.gyro_bias_error = float(np.linalg.norm(res.state.bias.gyro - bg))
            rep.accel_bias_error = float(np.linalg.norm(res.state.bias.accel - ba))

        if wcfg.refine_length > 0 and np.isfinite(rep.scale_ratio):
            ext_times = start + period * np.arange(int(round(wcfg.refine_length / period)) + 1)
            ext_idx = _keyframe_indices(gt.t, ext_times, 0.5 * period)
            if ext_idx is not None and ext_times[-1] <= dataset.imu.t[-1] and trajectory is None:
                ext = _surrogate(gt, ext_idx, s_true, R_vw)
                try:
                    with timer.time("refine"):
                        ref = refine(apply_initialization(ext, res), dataset.imu, res, noise,
                                     solver_cfg, prior)
                    rep.scale_ratio_refined = ref.cumulative_scale / s_true
                    rep.scale_error_refined = 100.0 * abs(rep.scale_ratio_refined - 1.0)
                except InertialInitError as exc:
                    log.info("refinement failed at %.2f s: %s", start, exc)
    rep.timings_ms = timing_capture(timer)
    return rep


def _run_chunk(args):
    dataset, starts, offset, wcfg, solver_cfg, noise, trajectory = args
    return [run_window(dataset, s, wcfg, solver_cfg, noise, offset + k, trajectory)
            for k, s in enumerate(starts)]


def _plain(d):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def exhaustive_experiment(dataset, wcfg=None, solver_cfg=None, noise=None, workers=1,
                          trajectory=None):
    """Launch an initialization every ``wcfg.stride`` seconds over the dataset."""
    wcfg = WindowConfig() if wcfg is None else wcfg
    solver_cfg = SolverConfig() if solver_cfg is None else solver_cfg
    noise = dataset.noise if noise is None else noise
    t_first = max(dataset.imu.t[0], dataset.groundtruth.t[0])
    t_last = min(dataset.imu.t[-1], dataset.groundtruth.t[-1])
    starts = window_starts(t_first, t_last, wcfg.window_length, wcfg.stride)

    if workers <= 1 or len(starts) < 2:
        windows = _run_chunk((dataset, starts, 0, wcfg, solver_cfg, noise, trajectory))
    else:
        chunks = np.array_split(np.arange(len(starts)), workers)
        jobs = [(dataset, starts[c], int(c[0]), wcfg, solver_cfg, noise, trajectory)
                for c in chunks if len(c)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            windows = [w for part in pool.map(_run_chunk, jobs) for w in part]

    windows = fill_total_times(windows)
    metadata = {
        "window": _plain(asdict(wcfg)),
        "solver": _plain(asdict(solver_cfg)),
        "noise": asdict(noise),
        "visual_source": "front-end trajectory" if trajectory is not None else
        "ground truth rotated by a random orientation and divided by a random scale",
        "t_tot_note": "t_tot reflects inertial rejections only; visual initialization "
                      "failures are not modelled",
        "excitation_definition": "mean_k ||a_k - mean(a)|| over the window",
    }
    return ExperimentReport(windows, compute_aggregates(windows),
                            scale_histogram(windows), metadata)


def check_report(report):
    """Recompute aggregates and histogram from the windows; raise on mismatch."""
    agg = compute_aggregates(report.windows)
    for k, v in agg.items():
        got = report.aggregates.get(k)
        same = (got == v) or (isinstance(v, float) and np.isnan(v) and
                              isinstance(got, float) and np.isnan(got))
        if not same:
            raise InvalidInput(f"aggregate {k!r} is {got}, recomputed {v}")
    if report.histogram:
        hist = scale_histogram(report.windows, report.histogram.get("bin_width", 0.05))
        if hist["counts"] != report.histogram["counts"]:
            raise InvalidInput("histogram does not match the window list")
    for w in report.windows:
        if np.isfinite(w.t_tot) and w.t_tot < w.t_init - 1e-12:
            raise InvalidInput(f"t_tot < t_init for window at {w.start}")
    return True
