"""Synthetic ground truth: analytic trajectories, IMU synthesis, up-to-scale views.

The metric simulator world has gravity ``(0, 0, -G)``. Keyframe truth is the
strapdown integration of the noise-free, bias-free IMU samples with the same
zero-order hold the preintegration uses, so noise-free data zeroes the
inertial residuals at the recorded ground truth up to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .init_solver import InertialState, UpToScaleTrajectory
from .manifold import exp_so3, random_rotation, right_jacobian
from .preintegration import BiasState, ImuStream, NoiseParams

# rotation taking g_I = (0, 0, G) onto the simulator's (0, 0, -G)
FLIP_Z = np.diag([1.0, -1.0, -1.0])


@dataclass
class TrajectoryModel:
    """Per-axis sums of sinusoids for position and axis-angle orientation.

    Coefficient arrays have shape ``(3, K)`` (axis, harmonic); frequencies in
    Hz, phases in rad. Orientation is ``R0 @ Exp(theta(t))``.
    """

    duration: float
    pos_amp: np.ndarray = field(default_factory=lambda: np.zeros((3, 1)))
    pos_freq: np.ndarray = field(default_factory=lambda: np.zeros((3, 1)))
    pos_phase: np.ndarray = field(default_factory=lambda: np.zeros((3, 1)))
    drift: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rot_amp: np.ndarray = field(default_factory=lambda: np.zeros((3, 1)))
    rot_freq: np.ndarray = field(default_factory=lambda: np.zeros((3, 1)))
    rot_phase: np.ndarray = field(default_factory=lambda: np.zeros((3, 1)))
    R0: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        for name in ("pos_amp", "pos_freq", "pos_phase", "rot_amp", "rot_freq", "rot_phase"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        self.drift = np.asarray(self.drift, dtype=float).reshape(3)
        self.p0 = np.asarray(self.p0, dtype=float).reshape(3)
        self.R0 = np.asarray(self.R0, dtype=float).reshape(3, 3)
        if self.duration <= 0:
            raise InvalidInput("model duration must be positive")


@dataclass(frozen=True)
class SimConfig:
    imu_rate: float = 200.0
    keyframe_rate: float = 4.0
    scale: float = 1.0
    bias: BiasState = field(default_factory=BiasState)
    noise: NoiseParams = field(default_factory=NoiseParams)
    noisy: bool = True
    R_vw: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.imu_rate < 2 * self.keyframe_rate:
            raise InvalidInput("IMU rate must be at least twice the keyframe rate")
        if not self.scale > 0:
            raise InvalidInput("true scale must be positive")


@dataclass
class SimOutput:
    times: np.ndarray  # IMU sample times
    R: np.ndarray      # true metric states at every IMU sample
    p: np.ndarray
    v: np.ndarray
    imu: ImuStream
    keyframe_index: np.ndarray
    visual: UpToScaleTrajectory
    truth: InertialState
    R_vw: np.ndarray
    config: SimConfig

    @property
    def keyframe_times(self):
        return self.times[self.keyframe_index]


def _sinusoids(amp, freq, phase, t):
    w = 2 * np.pi * freq
    arg = w[..., None] * t + phase[..., None]  # (3, K, T)
    f = (amp[..., None] * np.sin(arg)).sum(axis=1)
    df = (amp[..., None] * w[..., None] * np.cos(arg)).sum(axis=1)
    ddf = (-amp[..., None] * (w ** 2)[..., None] * np.sin(arg)).sum(axis=1)
    return f.T, df.T, ddf.T


def evaluate_model(model, t):
    """Closed-form ``(R, p, v, a, omega_body)``; stacked when ``t`` is an array."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0) or np.any(t > model.duration):
        raise InvalidInput(f"time outside [0, {model.duration}]")
    p, v, a = _sinusoids(model.pos_amp, model.pos_freq, model.pos_phase, t)
    p = p + model.p0 + model.drift * t[:, None]
    v = v + model.drift
    th, dth, _ = _sinusoids(model.rot_amp, model.rot_freq, model.rot_phase, t)
    R = model.R0 @ exp_so3(th)
    omega = np.einsum("nij,nj->ni", right_jacobian(th), dth)
    if scalar:
        return R[0], p[0], v[0], a[0], omega[0]
    return R, p, v, a, omega


def sample_times(model, config):
    n = int(np.floor(model.duration * config.imu_rate + 1e-9))
    return np.arange(n) / config.imu_rate


def clean_measurements(model, config, times=None):
    """Bias- and noise-free (gyro, specific force) at the sample times."""
    t = sample_times(model, config) if times is None else times
    R, _, _, a, omega = evaluate_model(model, t)
    g_world = np.array([0.0, 0.0, -config.noise.gravity])
    f = np.einsum("nji,nj->ni", R, a - g_world)
    return t, omega, f


def sample_imu(model, config):
    """Measured IMU stream: clean values plus constant biases plus white noise."""
    t, omega, f = clean_measurements(model, config)
    gyro = omega + config.bias.gyro
    accel = f + config.bias.accel
    if config.noisy:
        rng = np.random.default_rng(config.seed)
        sq = np.sqrt(config.imu_rate)
        gyro = gyro + rng.standard_normal(gyro.shape) * config.noise.gyro_noise * sq
        accel = accel + rng.standard_normal(accel.shape) * config.noise.accel_noise * sq
    return ImuStream(t, gyro, accel)


def strapdown(model, config, times, omega, f):
    """Integrate clean measurements from the analytic initial state (zero-order hold)."""
    R0, p0, v0, _, _ = evaluate_model(model, times[0])
    g = np.array([0.0, 0.0, -config.noise.gravity])
    dts = np.diff(times)
    inc = exp_so3(omega[:-1] * dts[:, None])
    n = len(times)
    R = np.empty((n, 3, 3))
    p = np.empty((n, 3))
    v = np.empty((n, 3))
    R[0], p[0], v[0] = R0, p0, v0
    for k in range(n - 1):
        dt = dts[k]
        acc = R[k] @ f[k]
        p[k + 1] = p[k] + v[k] * dt + 0.5 * (g + acc) * dt * dt
        v[k + 1] = v[k] + (g + acc) * dt
        R[k + 1] = R[k] @ inc[k]
    return R, p, v


def make_visual_trajectory(times, R, p, v, scale, R_vw, bias=None):
    """Up-to-scale view of metric states plus the matching ground-truth state."""
    if not scale > 0:
        raise InvalidInput("true scale must be positive")
    traj = UpToScaleTrajectory(times, R_vw @ R, p @ R_vw.T / scale)
    truth = InertialState(scale, R_vw @ FLIP_Z, BiasState() if bias is None else bias,
                          v @ R_vw.T / scale)
    return traj, truth


def keyframe_indices(n_samples, config):
    step = config.imu_rate / config.keyframe_rate
    idx = np.round(np.arange(0, n_samples, step)).astype(int)
    return idx[idx < n_samples]


def simulate(model, config):
    imu = sample_imu(model, config)
    _, omega, f = clean_measurements(model, config, imu.t)
    R, p, v = strapdown(model, config, imu.t, omega, f)
    kf = keyframe_indices(len(imu.t), config)
    if config.R_vw is None:
        R_vw = random_rotation(np.random.default_rng([config.seed, 1]))
    else:
        R_vw = np.asarray(config.R_vw, dtype=float)
    visual, truth = make_visual_trajectory(imu.t[kf], R[kf], p[kf], v[kf],
                                           config.scale, R_vw, config.bias)
    return SimOutput(imu.t, R, p, v, imu, kf, visual, truth, R_vw, config)


# ------------------------------------------------------------------ presets

def random_model(rng, duration, preset="excited", harmonics=2):
    """Random motion model.

    ``excited``: hand-held / drone-like sinusoidal motion, a few m/s^2 of
    acceleration and tens of degrees of rotation. ``degenerate``: constant
    velocity with fixed orientation. ``static``: no motion.
    """
    R0 = random_rotation(rng)
    if preset == "static":
        return TrajectoryModel(duration, R0=R0)
    if preset == "degenerate":
        return TrajectoryModel(duration, drift=rng.uniform(-1.0, 1.0, 3), R0=R0)
    if preset != "excited":
        raise InvalidInput(f"unknown motion preset {preset!r}")
    return TrajectoryModel(
        duration,
        pos_amp=rng.uniform(0.2, 0.8, (3, harmonics)),
        pos_freq=rng.uniform(0.15, 0.6, (3, harmonics)),
        pos_phase=rng.uniform(0, 2 * np.pi, (3, harmonics)),
        drift=rng.uniform(-0.3, 0.3, 3),
        p0=rng.uniform(-1, 1, 3),
        rot_amp=rng.uniform(0.05, 0.3, (3, harmonics)),
        rot_freq=rng.uniform(0.1, 0.5, (3, harmonics)),
        rot_phase=rng.uniform(0, 2 * np.pi, (3, harmonics)),
        R0=R0,
    )


def random_bias(rng, gyro_max=0.01, accel_max=0.05):
    return BiasState(rng.uniform(-gyro_max, gyro_max, 3), rng.uniform(-accel_max, accel_max, 3))


def random_scenario(seed, n_keyframes=10, keyframe_rate=4.0, preset="excited", noisy=True,
                    scale=None, bias=True, noise=None, duration=None, imu_rate=200.0):
    """One reproducible synthetic scenario (model + config) from an integer seed.

    By default the duration covers exactly ``n_keyframes`` keyframes.
    """
    rng = np.random.default_rng(seed)
    if duration is None:
        duration = (n_keyframes - 1) / keyframe_rate + 1.5 / imu_rate
    model = random_model(rng, duration, preset)
    cfg = SimConfig(
        imu_rate=imu_rate,
        keyframe_rate=keyframe_rate,
        scale=float(np.exp(rng.uniform(np.log(0.5), np.log(20.0)))) if scale is None else scale,
        bias=random_bias(rng) if bias else BiasState(),
        noise=NoiseParams() if noise is None else noise,
        noisy=noisy,
        R_vw=random_rotation(rng),
        seed=int(rng.integers(2 ** 31)),
    )
    return model, cfg
