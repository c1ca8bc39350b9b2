"""IMU preintegration between keyframes.

Measurements are held constant over ``[t_k, t_{k+1})`` (zero-order hold) and
the last sample of an interval is held until the interval end. The
covariance of the preintegrated noise is ordered ``(dphi, dv, dp)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .manifold import exp_so3, hat, right_jacobian

DEFAULT_GRAVITY = 9.80665


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True)
class NoiseParams:
    """Continuous-time white noise densities and gravity magnitude."""

    gyro_noise: float = 1.7e-4  # rad/s/sqrt(Hz)
    accel_noise: float = 2.0e-3  # m/s^2/sqrt(Hz)
    gravity: float = DEFAULT_GRAVITY

    def __post_init__(self):
        if not (self.gyro_noise > 0 and self.accel_noise > 0 and self.gravity > 0):
            raise InvalidInput("noise densities and gravity must be strictly positive")


# noise densities of the ADIS16448 IMU carried by the EuRoC MAV (the defaults above)
EUROC_NOISE = NoiseParams()


@dataclass(frozen=True)
class BiasState:
    gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float).reshape(3))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.gyro)) and np.all(np.isfinite(self.accel))):
            raise InvalidInput("bias components must be finite")

    def __eq__(self, other):
        if not isinstance(other, BiasState):
            return NotImplemented
        return np.array_equal(self.gyro, other.gyro) and np.array_equal(self.accel, other.accel)


class ImuStream:
    """Time-ordered IMU measurements stored as arrays.

    ``t_end`` optionally marks where the last sample's hold stops; for a
    keyframe interval it is the timestamp of the next keyframe.
    """

    def __init__(self, t, gyro, accel, t_end=None, check=True):
        self.t = np.asarray(t, dtype=float).reshape(-1)
        self.gyro = np.asarray(gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(accel, dtype=float).reshape(-1, 3)
        self.t_end = None if t_end is None else float(t_end)
        if check:
            if not (len(self.t) == len(self.gyro) == len(self.accel)):
                raise InvalidInput("timestamp, gyro and accel arrays differ in length")
            if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
                raise InvalidInput("IMU timestamps must be strictly increasing")
            if self.t_end is not None and len(self.t) and self.t_end < self.t[-1]:
                raise InvalidInput("t_end precedes the last sample")

    @classmethod
    def from_samples(cls, samples, t_end=None):
        samples = list(samples)
        if not samples:
            return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)), t_end)
        return cls([s.t for s in samples], [s.gyro for s in samples],
                   [s.accel for s in samples], t_end)

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        for k in range(len(self.t)):
            yield ImuSample(float(self.t[k]), self.gyro[k].copy(), self.accel[k].copy())

    def window(self, t0, t1):
        """Samples with ``t0 <= t < t1``."""
        lo, hi = np.searchsorted(self.t, [t0, t1], side="left")
        return ImuStream(self.t[lo:hi], self.gyro[lo:hi], self.accel[lo:hi], check=False)

    def intervals(self, keyframe_times):
        """Split into one stream per consecutive keyframe pair.

        A sample exactly at a keyframe timestamp begins the next interval. When
        an interval does not start with a sample, the previous measurement is
        carried over to the keyframe time so the hold is partitioned exactly.
        """
        kt = np.asarray(keyframe_times, dtype=float)
        if len(kt) < 2 or np.any(np.diff(kt) <= 0):
            raise InvalidInput("need >= 2 strictly increasing keyframe times")
        out = []
        for t0, t1 in zip(kt[:-1], kt[1:]):
            lo, hi = np.searchsorted(self.t, [t0, t1], side="left")
            t = self.t[lo:hi]
            g = self.gyro[lo:hi]
            a = self.accel[lo:hi]
            if len(t) == 0 or t[0] > t0:
                if lo == 0:
                    raise InvalidInput(f"no IMU data covering keyframe time {t0}")
                t = np.concatenate([[t0], t])
                g = np.vstack([self.gyro[lo - 1], g])
                a = np.vstack([self.accel[lo - 1], a])
            out.append(ImuStream(t, g, a, t_end=t1, check=False))
        return out


@dataclass(frozen=True)
class Preintegrated:
    """Preintegrated deltas for one keyframe interval (immutable)."""

    delta_R: np.ndarray
    delta_v: np.ndarray
    delta_p: np.ndarray
    dt: float
    cov: np.ndarray
    J_R_g: np.ndarray
    J_v_g: np.ndarray
    J_v_a: np.ndarray
    J_p_g: np.ndarray
    J_p_a: np.ndarray
    bias: BiasState
    samples: ImuStream | None = None

    def __post_init__(self):
        for name in ("delta_R", "delta_v", "delta_p", "cov", "J_R_g", "J_v_g",
                     "J_v_a", "J_p_g", "J_p_a"):
            arr = getattr(self, name)
            arr.setflags(write=False)


def _sample_intervals(stream, t_end):
    t = stream.t
    if len(t) == 0:
        raise InvalidInput("cannot preintegrate an empty sample list")
    if len(t) > 1 and np.any(np.diff(t) <= 0):
        raise InvalidInput("IMU timestamps must be strictly increasing")
    if t_end is None:
        t_end = stream.t_end
    if t_end is None:
        if len(t) < 2:
            raise InvalidInput("a single sample needs an explicit t_end")
        t_end = t[-1] + (t[-1] - t[-2])
    if t_end < t[-1]:
        raise InvalidInput("t_end precedes the last sample")
    return np.diff(np.append(t, t_end))


def integrate(samples, bias_lin=None, noise=None, t_end=None, keep_samples=True):
    """Preintegrate ``samples`` (an :class:`ImuStream` or a list of :class:`ImuSample`)."""
    if not isinstance(samples, ImuStream):
        samples = ImuStream.from_samples(samples)
    bias_lin = BiasState() if bias_lin is None else bias_lin
    noise = NoiseParams() if noise is None else noise
    dts = _sample_intervals(samples, t_end)

    w = samples.gyro - bias_lin.gyro
    a = samples.accel - bias_lin.accel
    inc = w * dts[:, None]
    dR_k = exp_so3(inc)
    Jr_k = right_jacobian(inc)
    ha = hat(a)

    dR = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    cov = np.zeros((9, 9))
    JRg = np.zeros((3, 3))
    Jvg = np.zeros((3, 3))
    Jva = np.zeros((3, 3))
    Jpg = np.zeros((3, 3))
    Jpa = np.zeros((3, 3))
    A = np.eye(9)
    Bg = np.zeros((9, 3))
    Ba = np.zeros((9, 3))
    var_g = noise.gyro_noise ** 2
    var_a = noise.accel_noise ** 2

    for k in range(len(dts)):
        dt = dts[k]
        if dt <= 0.0:
            continue
        dt2 = dt * dt
        Ra = dR @ a[k]
        Rha = dR @ ha[k]

        A[0:3, 0:3] = dR_k[k].T
        A[3:6, 0:3] = -Rha * dt
        A[6:9, 0:3] = -0.5 * dt2 * Rha
        A[6:9, 3:6] = np.eye(3) * dt
        Bg[0:3] = Jr_k[k] * dt
        Ba[3:6] = dR * dt
        Ba[6:9] = 0.5 * dt2 * dR
        cov = A @ cov @ A.T + (var_g / dt) * (Bg @ Bg.T) + (var_a / dt) * (Ba @ Ba.T)

        RhaJ = Rha @ JRg
        Jpa = Jpa + Jva * dt - 0.5 * dt2 * dR
        Jpg = Jpg + Jvg * dt - 0.5 * dt2 * RhaJ
        Jva = Jva - dR * dt
        Jvg = Jvg - RhaJ * dt
        JRg = dR_k[k].T @ JRg - Jr_k[k] * dt

        dp = dp + dv * dt + 0.5 * dt2 * Ra
        dv = dv + Ra * dt
        dR = dR @ dR_k[k]

    cov = 0.5 * (cov + cov.T)
    return Preintegrated(dR, dv, dp, float(dts.sum()), cov, JRg, Jvg, Jva, Jpg, Jpa,
                         bias_lin, samples if keep_samples else None)


def corrected_deltas(p: Preintegrated, b: BiasState):
    """First-order bias update of the preintegrated deltas."""
    dbg = b.gyro - p.bias.gyro
    dba = b.accel - p.bias.accel
    dR = p.delta_R @ exp_so3(p.J_R_g @ dbg)
    dv = p.delta_v + p.J_v_g @ dbg + p.J_v_a @ dba
    dp = p.delta_p + p.J_p_g @ dbg + p.J_p_a @ dba
    return dR, dv, dp


def repreintegrate(intervals, new_bias, noise=None):
    """Integrate every interval again with ``new_bias`` as linearization point.

    ``intervals`` may be raw :class:`ImuStream` objects or :class:`Preintegrated`
    values that kept their samples.
    """
    out = []
    for item in intervals:
        if isinstance(item, Preintegrated):
            if item.samples is None:
                raise InvalidInput("preintegration was built without retaining its samples")
            item = item.samples
        out.append(integrate(item, new_bias, noise))
    return out


def chain(first: Preintegrated, second: Preintegrated):
    """Compose noise-free deltas of two adjacent intervals, ``i->j`` then ``j->k``."""
    dR = first.delta_R @ second.delta_R
    dv = first.delta_v + first.delta_R @ second.delta_v
    dp = first.delta_p + first.delta_v * second.dt + first.delta_R @ second.delta_p
    return dR, dv, dp, first.dt + second.dt
