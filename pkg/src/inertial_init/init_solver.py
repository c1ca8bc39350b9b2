"""Inertial-only MAP initialization.

Given an up-to-scale keyframe trajectory (kept fixed) and the IMU
preintegrations between consecutive keyframes, estimate the scale ``s``, the
gravity direction ``R_wg``, constant IMU biases and the up-to-scale keyframe
velocities by minimizing

    ||b^a||^2_{Sigma_p} + sum_i ||r_I(i-1, i)||^2_{Sigma_I(i-1, i)}

with Levenberg-Marquardt on the manifold (multiplicative scale update,
two-angle gravity update, additive biases and velocities). Gravity in the
visual world frame is ``R_wg @ (0, 0, G)``.

Tangent-space layout used by :func:`retract` and the solver::

    [ds, dalpha, dbeta, dbg(3), dba(3), dv_0(3), ..., dv_{N-1}(3)]
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInput, InvalidState, NonConvergence, NumericalError
from .manifold import exp_so3, hat, log_so3, right_jacobian, right_jacobian_inv, shortest_arc
from .preintegration import (DEFAULT_GRAVITY, BiasState, ImuStream, NoiseParams, integrate,
                             repreintegrate)

log = logging.getLogger(__name__)

N_GLOBAL = 9  # s, 2 gravity angles, gyro bias, accel bias
BLOCK_COLUMNS = {"s": slice(0, 1), "g_dir": slice(1, 3), "b_g": slice(3, 6),
                 "b_a": slice(6, 9), "v_i": slice(9, 12), "v_j": slice(12, 15)}
RESIDUAL_ROWS = {"dR": slice(0, 3), "dv": slice(3, 6), "dp": slice(6, 9)}


# --------------------------------------------------------------------------- types

@dataclass(frozen=True)
class UpToScaleTrajectory:
    """Keyframe rotations (body to visual world) and up-to-scale positions."""

    times: np.ndarray
    rotations: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        R = np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3)
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if len(t) < 2:
            raise InvalidInput("trajectory needs at least 2 keyframes")
        if not (len(t) == len(R) == len(p)):
            raise InvalidInput("trajectory arrays differ in length")
        if np.any(np.diff(t) <= 0):
            raise InvalidInput("keyframe timestamps must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "rotations", R)
        object.__setattr__(self, "positions", p)

    def __len__(self):
        return len(self.times)

    def subset(self, idx):
        return UpToScaleTrajectory(self.times[idx], self.rotations[idx], self.positions[idx])


@dataclass(frozen=True)
class InertialState:
    scale: float
    R_wg: np.ndarray
    bias: BiasState
    velocities: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidInput("scale must be positive")
        object.__setattr__(self, "R_wg", np.asarray(self.R_wg, dtype=float).reshape(3, 3))
        object.__setattr__(self, "velocities",
                           np.asarray(self.velocities, dtype=float).reshape(-1, 3))

    def gravity(self, G=DEFAULT_GRAVITY):
        return self.R_wg @ np.array([0.0, 0.0, G])

    def rotated(self, Q):
        """Same state expressed in a visual frame rotated by ``Q``."""
        return replace(self, R_wg=Q @ self.R_wg, velocities=self.velocities @ Q.T)


@dataclass(frozen=True)
class PriorConfig:
    accel_cov: np.ndarray = field(default_factory=lambda: 0.1 ** 2 * np.eye(3))

    def __post_init__(self):
        cov = np.asarray(self.accel_cov, dtype=float).reshape(3, 3)
        if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() <= 0:
            raise InvalidInput("accelerometer-bias prior covariance must be SPD")
        object.__setattr__(self, "accel_cov", cov)

    @classmethod
    def isotropic(cls, std):
        return cls(std ** 2 * np.eye(3))

    def sqrt_information(self):
        # L such that L^T L = inv(cov)
        return np.linalg.cholesky(np.linalg.inv(self.accel_cov)).T


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50
    initial_damping: float = 1e-4
    cost_tol: float = 1e-9
    step_tol: float = 1e-10
    abs_cost_tol: float = 1e-18
    max_damping: float = 1e32
    scale_seeds: tuple = (1.0, 4.0, 16.0)
    accel_threshold: float = 0.005
    # re-preintegrate at the estimated biases and re-solve this many times
    relinearize: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scale_seeds", tuple(float(s) for s in self.scale_seeds))
        if not self.scale_seeds or min(self.scale_seeds) <= 0:
            raise InvalidInput("need at least one positive scale seed")
        if min(self.cost_tol, self.step_tol, self.initial_damping) <= 0 or self.max_iterations < 1:
            raise InvalidInput("solver tolerances must be positive")
        if self.accel_threshold < 0:
            raise InvalidInput("acceleration threshold must be non-negative")


@dataclass
class SeedResult:
    seed: float
    cost: float
    iterations: int
    converged: bool
    state: InertialState
    message: str = ""
    wall_ms: float = 0.0
    costs: list = field(default_factory=list)


@dataclass
class InitResult:
    state: InertialState
    cost: float
    seeds: list
    accepted: bool
    gravity: np.ndarray
    times: np.ndarray
    excitation: float = float("nan")
    observable: bool = True
    reason: str = ""
    cumulative_scale: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.cumulative_scale):
            self.cumulative_scale = self.state.scale


@dataclass(frozen=True)
class MetricTrajectory:
    """Scaled, gravity-aligned keyframes (gravity is ``(0, 0, G)`` in this frame)."""

    times: np.ndarray
    rotations: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    gravity: np.ndarray


# ------------------------------------------------------------------ residual model

def _g_dir_basis(G):
    # d(Exp(a, b, 0) g_I)/d(a, b) = -hat(g_I)[:, :2]
    return -hat(np.array([0.0, 0.0, G]))[:, :2]


class InertialProblem:
    """Stacked residual model over all keyframe intervals of one window."""

    def __init__(self, trajectory, preints, gravity=DEFAULT_GRAVITY, prior=None):
        if len(preints) != len(trajectory) - 1:
            raise InvalidInput(
                f"{len(preints)} preintegrations for {len(trajectory)} keyframes")
        self.trajectory = trajectory
        self.preints = list(preints)
        self.G = float(gravity)
        self.g_I = np.array([0.0, 0.0, self.G])
        self.prior = PriorConfig() if prior is None else prior
        self.n_kf = len(trajectory)
        self.dim = N_GLOBAL + 3 * self.n_kf

        R = trajectory.rotations
        p = trajectory.positions
        self.RiT = np.swapaxes(R[:-1], -1, -2)
        self.Rj = R[1:]
        self.dpbar = p[1:] - p[:-1]
        st = lambda name: np.stack([getattr(q, name) for q in self.preints])
        self.dt = np.array([q.dt for q in self.preints])
        self.dR, self.dv, self.dp = st("delta_R"), st("delta_v"), st("delta_p")
        self.JRg, self.Jvg, self.Jva = st("J_R_g"), st("J_v_g"), st("J_v_a")
        self.Jpg, self.Jpa = st("J_p_g"), st("J_p_a")
        self.bg0 = np.stack([q.bias.gyro for q in self.preints])
        self.ba0 = np.stack([q.bias.accel for q in self.preints])
        self.RiTRj = self.RiT @ self.Rj
        self.W = np.stack([whitening(q.cov, k) for k, q in enumerate(self.preints)])
        self.Lp = self.prior.sqrt_information()
        self._Gb = _g_dir_basis(self.G)

    # raw residuals (M, 9)
    def residuals(self, state):
        s = state.scale
        dbg = state.bias.gyro - self.bg0
        dba = state.bias.accel - self.ba0
        self._phi = np.einsum("mij,mj->mi", self.JRg, dbg)
        dRc = self.dR @ exp_so3(self._phi)
        rR = log_so3(np.swapaxes(dRc, -1, -2) @ self.RiTRj)
        g = state.R_wg @ self.g_I
        v = state.velocities
        dvc = self.dv + np.einsum("mij,mj->mi", self.Jvg, dbg) + np.einsum("mij,mj->mi", self.Jva, dba)
        dpc = self.dp + np.einsum("mij,mj->mi", self.Jpg, dbg) + np.einsum("mij,mj->mi", self.Jpa, dba)
        dt = self.dt[:, None]
        wv = s * (v[1:] - v[:-1]) - g * dt
        wp = s * (self.dpbar - v[:-1] * dt) - 0.5 * g * dt ** 2
        rv = np.einsum("mij,mj->mi", self.RiT, wv) - dvc
        rp = np.einsum("mij,mj->mi", self.RiT, wp) - dpc
        self._rR = rR
        return np.concatenate([rR, rv, rp], axis=1)

    def whitened(self, state):
        r = self.residuals(state)
        e = np.einsum("mab,mb->ma", self.W, r).reshape(-1)
        return np.concatenate([e, self.Lp @ state.bias.accel])

    def cost(self, state):
        e = self.whitened(state)
        return float(e @ e)

    def block_jacobians(self, state):
        """Unwhitened (M, 9, 15) Jacobians over (s, g_dir, b_g, b_a, v_i, v_j)."""
        self.residuals(state)
        M = len(self.dt)
        s = state.scale
        v = state.velocities
        dt = self.dt
        J = np.zeros((M, 9, 15))
        # rotation residual: only the gyro bias acts
        Er = exp_so3(self._rR)
        J[:, 0:3, 3:6] = -right_jacobian_inv(self._rR) @ np.swapaxes(Er, -1, -2) \
            @ right_jacobian(self._phi) @ self.JRg
        # scale (multiplicative update evaluated at ds = 0)
        J[:, 3:6, 0] = s * np.einsum("mij,mj->mi", self.RiT, v[1:] - v[:-1])
        J[:, 6:9, 0] = s * np.einsum("mij,mj->mi", self.RiT, self.dpbar - v[:-1] * dt[:, None])
        # gravity direction
        RG = self.RiT @ (state.R_wg @ self._Gb)
        J[:, 3:6, 1:3] = -RG * dt[:, None, None]
        J[:, 6:9, 1:3] = -0.5 * RG * (dt ** 2)[:, None, None]
        # biases
        J[:, 3:6, 3:6] = -self.Jvg
        J[:, 3:6, 6:9] = -self.Jva
        J[:, 6:9, 3:6] = -self.Jpg
        J[:, 6:9, 6:9] = -self.Jpa
        # velocities
        J[:, 3:6, 9:12] = -s * self.RiT
        J[:, 3:6, 12:15] = s * self.RiT
        J[:, 6:9, 9:12] = -s * self.RiT * dt[:, None, None]
        return J

    def jacobian(self, state):
        """Dense whitened Jacobian of :meth:`whitened`."""
        Jb = np.einsum("mab,mbc->mac", self.W, self.block_jacobians(state))
        M = len(self.dt)
        J = np.zeros((M, 9, self.dim))
        J[:, :, :N_GLOBAL] = Jb[:, :, :N_GLOBAL]
        for m in range(M):
            c = N_GLOBAL + 3 * m
            J[m, :, c:c + 6] = Jb[m, :, 9:15]
        prior_rows = np.zeros((3, self.dim))
        prior_rows[:, 6:9] = self.Lp
        return np.vstack([J.reshape(9 * M, self.dim), prior_rows])


def whitening(cov, index=None):
    """Square-root information ``W`` with ``W^T W = inv(cov)``."""
    cov = 0.5 * (cov + cov.T)
    try:
        C = np.linalg.cholesky(cov)
        return np.linalg.inv(C)
    except np.linalg.LinAlgError:
        pass
    lam, V = np.linalg.eigh(cov)
    if lam.min() < -1e-12 * max(1.0, lam.max()):
        raise NumericalError(f"covariance of interval {index} is not PSD "
                             f"(min eigenvalue {lam.min():.3e})")
    lam = np.maximum(lam, 1e-12 * lam.max())
    return (V / np.sqrt(lam)).T


# ------------------------------------------------------------------ public API

def _kf(trajectory, i):
    return trajectory.rotations[i], trajectory.positions[i]


def residual_block(state, preint, trajectory, i, j=None, gravity=DEFAULT_GRAVITY):
    """Inertial residual ``(r_dR, r_dv, r_dp)`` between keyframes ``i`` and ``j``."""
    j = i + 1 if j is None else j
    sub = trajectory.subset([i, j])
    sub_state = replace(state, velocities=state.velocities[[i, j]])
    return InertialProblem(sub, [preint], gravity).residuals(sub_state)[0]


def jacobians(state, preint, trajectory, i, j=None, gravity=DEFAULT_GRAVITY):
    """9x15 block over ``(ds, dg_dir, db_g, db_a, dv_i, dv_j)``."""
    j = i + 1 if j is None else j
    sub = trajectory.subset([i, j])
    sub_state = replace(state, velocities=state.velocities[[i, j]])
    return InertialProblem(sub, [preint], gravity).block_jacobians(sub_state)[0]


def prior_residual(state, prior=None):
    prior = PriorConfig() if prior is None else prior
    ba = state.bias.accel
    return float(ba @ np.linalg.solve(prior.accel_cov, ba))


def total_cost(state, trajectory, preints, gravity=DEFAULT_GRAVITY, prior=None):
    return InertialProblem(trajectory, preints, gravity, prior).cost(state)


def retract(state, dx):
    dx = np.asarray(dx, dtype=float).reshape(-1)
    n = len(state.velocities)
    if len(dx) != N_GLOBAL + 3 * n:
        raise InvalidInput(f"update has dimension {len(dx)}, expected {N_GLOBAL + 3 * n}")
    return InertialState(
        scale=state.scale * float(np.exp(dx[0])),
        R_wg=state.R_wg @ exp_so3(np.array([dx[1], dx[2], 0.0])),
        bias=BiasState(state.bias.gyro + dx[3:6], state.bias.accel + dx[6:9]),
        velocities=state.velocities + dx[N_GLOBAL:].reshape(n, 3),
    )


def finite_difference_velocities(times, positions):
    t = np.asarray(times, dtype=float)
    p = np.asarray(positions, dtype=float)
    v = np.empty_like(p)
    v[1:-1] = (p[2:] - p[:-2]) / (t[2:] - t[:-2])[:, None]
    v[0] = (p[1] - p[0]) / (t[1] - t[0])
    v[-1] = (p[-1] - p[-2]) / (t[-1] - t[-2])
    return v


def initial_guess(trajectory, imu, gravity=DEFAULT_GRAVITY, scale=1.0, diagnostics=None):
    """Zero biases, gravity along the mean rotated specific force, FD velocities."""
    t_kf = trajectory.times
    win = imu.window(t_kf[0], t_kf[-1] + 1e-12) if isinstance(imu, ImuStream) else imu
    R_wg = np.eye(3)
    degenerate = True
    if len(win):
        nearest = np.abs(win.t[:, None] - t_kf[None, :]).argmin(axis=1)
        f = np.einsum("nij,nj->ni", trajectory.rotations[nearest], win.accel).mean(axis=0)
        if np.linalg.norm(f) >= 1e-6 * gravity:
            R_wg = shortest_arc([0.0, 0.0, 1.0], -f)
            degenerate = False
    if diagnostics is not None:
        diagnostics["gravity_guess_degenerate"] = degenerate
    if degenerate:
        log.warning("mean specific force is degenerate; gravity seed falls back to identity")
    return InertialState(scale, R_wg, BiasState(),
                         finite_difference_velocities(t_kf, trajectory.positions))


def mean_accel_deviation(imu):
    """Mean over samples of ``||a_k - mean(a)||`` (specific-force excitation)."""
    a = imu.accel
    if len(a) == 0:
        raise InvalidInput("observability check needs at least one sample")
    return float(np.linalg.norm(a - a.mean(axis=0), axis=1).mean())


def observability_check(imu, gravity=DEFAULT_GRAVITY, threshold=0.005):
    """False (reject) when specific-force variation is below ``threshold * G``."""
    return mean_accel_deviation(imu) >= threshold * gravity


def _lm(problem, state, config):
    e = problem.whitened(state)
    cost = float(e @ e)
    costs = [cost]
    J = problem.jacobian(state)
    H = J.T @ J
    grad = J.T @ e
    lam = config.initial_damping * float(np.mean(np.diag(H)))
    eye = np.eye(problem.dim)
    it = 0
    while True:
        if cost < config.abs_cost_tol:
            return state, cost, it, True, "zero cost", costs
        if it >= config.max_iterations:
            return state, cost, it, False, "max iterations", costs
        it += 1
        try:
            dx = np.linalg.solve(H + lam * eye, -grad)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(H + lam * eye, -grad, rcond=None)[0]
        if np.linalg.norm(dx) < config.step_tol:
            return state, cost, it, True, "small update", costs
        cand = retract(state, dx)
        e_new = problem.whitened(cand)
        new_cost = float(e_new @ e_new)
        if np.isfinite(new_cost) and new_cost < cost:
            rel = (cost - new_cost) / cost
            state, cost = cand, new_cost
            costs.append(cost)
            lam *= 0.5
            J = problem.jacobian(state)
            H = J.T @ J
            grad = J.T @ e_new
            if rel < config.cost_tol:
                return state, cost, it, True, "small cost decrease", costs
        else:
            lam *= 10.0
            if lam > config.max_damping:
                raise NonConvergence("LM damping overflow",
                                     {"iterations": it, "cost": cost, "damping": lam,
                                      "state": state, "costs": costs})


def optimize(trajectory, preints, seed_state, config=None, prior=None,
             gravity=DEFAULT_GRAVITY, problem=None):
    """Run LM from ``seed_state``; returns a :class:`SeedResult`."""
    config = SolverConfig() if config is None else config
    problem = InertialProblem(trajectory, preints, gravity, prior) if problem is None else problem
    t0 = time.perf_counter()
    state, cost, it, ok, msg, costs = _lm(problem, seed_state, config)
    return SeedResult(seed_state.scale, cost, it, ok, state, msg,
                      (time.perf_counter() - t0) * 1e3, costs)


def multi_start_optimize(trajectory, preints, imu, config=None, prior=None,
                         noise=None, seed_states=None):
    """Optimize from every scale seed and keep the lowest final cost.

    ``seed_states`` overrides the default initial guess (one per scale seed).
    """
    config = SolverConfig() if config is None else config
    G = (noise or NoiseParams()).gravity
    problem = InertialProblem(trajectory, preints, G, prior)
    diagnostics = {}
    if seed_states is None:
        base = initial_guess(trajectory, imu, G, 1.0, diagnostics)
        seed_states = [replace(base, scale=s) for s in config.scale_seeds]

    results = []
    for seed_state in seed_states:
        try:
            results.append(optimize(trajectory, preints, seed_state, config, prior, G, problem))
        except NonConvergence as exc:
            d = exc.diagnostics
            results.append(SeedResult(seed_state.scale, d.get("cost", float("inf")),
                                      d.get("iterations", 0), False,
                                      d.get("state", seed_state), str(exc),
                                      costs=d.get("costs", [])))
        except np.linalg.LinAlgError as exc:
            results.append(SeedResult(seed_state.scale, float("inf"), 0, False,
                                      seed_state, f"linear algebra failure: {exc}"))

    def key(r):
        c = r.cost if np.isfinite(r.cost) else float("inf")
        return (c, r.seed)

    best = min(results, key=key)
    win = imu.window(trajectory.times[0], trajectory.times[-1]) if isinstance(imu, ImuStream) else imu
    excitation = mean_accel_deviation(win)
    observable = excitation >= config.accel_threshold * G
    accepted = bool(observable and best.converged and np.isfinite(best.cost))
    if not observable:
        reason = (f"insufficient excitation: mean specific-force deviation "
                  f"{excitation:.4g} < {config.accel_threshold * G:.4g} m/s^2")
    elif not best.converged:
        reason = f"best seed did not converge ({best.message})"
    else:
        reason = ""
    diagnostics["excitation_definition"] = "mean_k ||a_k - mean(a)||"
    return InitResult(best.state, best.cost, results, accepted, best.state.gravity(G),
                      trajectory.times.copy(), excitation, observable, reason,
                      diagnostics=diagnostics)


def preintegrate_window(trajectory, imu, noise=None, bias=None):
    noise = NoiseParams() if noise is None else noise
    return [integrate(seg, bias, noise) for seg in imu.intervals(trajectory.times)]


def initialize(trajectory, imu, noise=None, config=None, prior=None):
    """Preintegrate the window and run the multi-start inertial-only estimation.

    The winning solution is then relinearized ``config.relinearize`` times:
    the window is re-preintegrated at the estimated biases and the solver is
    restarted from the winner. Returns ``(result, preints)`` where
    ``preints`` are linearized at the final biases.
    """
    config = SolverConfig() if config is None else config
    noise = NoiseParams() if noise is None else noise
    preints = preintegrate_window(trajectory, imu, noise)
    res = multi_start_optimize(trajectory, preints, imu, config, prior, noise)
    for _ in range(config.relinearize):
        best = min(res.seeds, key=lambda r: (r.cost, r.seed))
        if not best.converged:
            break
        preints = repreintegrate(preints, res.state.bias, noise)
        try:
            again = optimize(trajectory, preints, res.state, config, prior, noise.gravity)
        except NonConvergence as exc:
            res.diagnostics["relinearize_failure"] = str(exc)
            break
        res.diagnostics.setdefault("relinearized_costs", []).append(again.cost)
        res.diagnostics.setdefault("relinearize_ms", []).append(again.wall_ms)
        res.state = again.state
        res.cost = again.cost
        res.gravity = again.state.gravity(noise.gravity)
        res.cumulative_scale = again.state.scale
        res.accepted = bool(res.accepted and again.converged)
    return res, preints


def apply_initialization(trajectory, result, velocities=None):
    """Scale the trajectory and rotate it so gravity becomes ``(0, 0, G)``.

    Velocities are taken from ``result`` for keyframes whose timestamps match
    the estimation window; other keyframes get NaN unless ``velocities`` is given.
    """
    if not result.accepted:
        raise InvalidState(f"initialization was not accepted: {result.reason}")
    s = result.state.scale
    RT = result.state.R_wg.T
    if velocities is None:
        velocities = np.full((len(trajectory), 3), np.nan)
        for k, t in enumerate(trajectory.times):
            hit = np.flatnonzero(np.abs(result.times - t) < 1e-9)
            if len(hit):
                velocities[k] = result.state.velocities[hit[0]]
    return MetricTrajectory(
        times=trajectory.times.copy(),
        rotations=RT @ trajectory.rotations,
        positions=s * trajectory.positions @ RT.T,
        velocities=s * np.asarray(velocities) @ RT.T,
        gravity=RT @ result.gravity,
    )


def refine(metric, imu, previous, noise=None, config=None, prior=None):
    """Repeat the inertial-only estimation on an already metric, gravity-aligned window.

    Single scale seed 1, warm-started from the previous biases and the known
    velocities. The returned ``cumulative_scale`` composes both estimates.
    """
    config = SolverConfig() if config is None else config
    config = replace(config, scale_seeds=(1.0,))
    noise = NoiseParams() if noise is None else noise
    traj = UpToScaleTrajectory(metric.times, metric.rotations, metric.positions)
    v = np.array(metric.velocities, dtype=float)
    fd = finite_difference_velocities(traj.times, traj.positions)
    missing = ~np.all(np.isfinite(v), axis=1)
    v[missing] = fd[missing]
    seed = InertialState(1.0, np.eye(3), previous.state.bias, v)
    preints = preintegrate_window(traj, imu, noise, previous.state.bias)
    res = multi_start_optimize(traj, preints, imu, config, prior, noise, seed_states=[seed])
    res.cumulative_scale = previous.cumulative_scale * res.state.scale
    return res
