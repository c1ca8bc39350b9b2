"""Finite-difference validation of the analytic inertial residual Jacobians.

Each trial draws a random interval (IMU samples, linearization bias, two
keyframes) and a random state, then compares every ``3 x k`` block of the
analytic Jacobian with central differences taken through :func:`retract`.
The error of a block is ``||J_analytic - J_fd||_F / max(||J_fd||_F, 1)``,
i.e. relative for blocks of magnitude above one and absolute below, so the
structurally zero blocks are checked too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .init_solver import (BLOCK_COLUMNS, N_GLOBAL, RESIDUAL_ROWS, InertialProblem,
                          InertialState, UpToScaleTrajectory, retract)
from .manifold import exp_so3, random_rotation
from .preintegration import BiasState, ImuStream, NoiseParams, integrate

BLOCK_NAMES = [f"{r}/{c}" for r in RESIDUAL_ROWS for c in BLOCK_COLUMNS]
DEFAULT_THRESHOLD = 1e-5
DEFAULT_STEP = 1e-6


@dataclass
class JacobianReport:
    trials: int
    seed: int
    threshold: float
    worst: dict = field(default_factory=dict)   # block -> worst error over trials
    passed: bool = False

    def failing(self):
        return [k for k, v in self.worst.items() if not v < self.threshold]

    def to_dict(self):
        return {"trials": self.trials, "seed": self.seed, "threshold": self.threshold,
                "passed": self.passed, "worst": dict(self.worst), "failing": self.failing()}


def random_instance(rng, duration=0.25, rate=200.0, noise=None):
    """Random ``(problem, state)`` over one keyframe interval."""
    noise = NoiseParams() if noise is None else noise
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    gyro = rng.normal(0.0, 1.0, (n, 3))
    accel = rng.normal(0.0, 3.0, (n, 3)) + np.array([0.0, 0.0, noise.gravity])
    lin = BiasState(rng.normal(0, 0.01, 3), rng.normal(0, 0.1, 3))
    pre = integrate(ImuStream(t, gyro, accel, t_end=duration), lin, noise)
    Ri = random_rotation(rng)
    Rj = Ri @ pre.delta_R @ exp_so3(rng.normal(0, 0.05, 3))
    traj = UpToScaleTrajectory(np.array([0.0, duration]), np.stack([Ri, Rj]),
                               rng.normal(0, 1.0, (2, 3)))
    state = InertialState(
        scale=float(np.exp(rng.uniform(np.log(0.5), np.log(20.0)))),
        R_wg=random_rotation(rng),
        bias=BiasState(lin.gyro + rng.normal(0, 0.02, 3), lin.accel + rng.normal(0, 0.2, 3)),
        velocities=rng.normal(0, 1.0, (2, 3)),
    )
    return InertialProblem(traj, [pre], noise.gravity), state


def numeric_jacobian(problem, state, step=DEFAULT_STEP):
    """Central differences of the raw residual through the retraction, (9, 15)."""
    J = np.zeros((9, N_GLOBAL + 6))
    for k in range(J.shape[1]):
        dx = np.zeros(N_GLOBAL + 6)
        dx[k] = step
        rp = problem.residuals(retract(state, dx))[0]
        rm = problem.residuals(retract(state, -dx))[0]
        J[:, k] = (rp - rm) / (2 * step)
    return J


def block_errors(Ja, Jn):
    out = {}
    for r, rs in RESIDUAL_ROWS.items():
        for c, cs in BLOCK_COLUMNS.items():
            diff = np.linalg.norm(Ja[rs, cs] - Jn[rs, cs])
            out[f"{r}/{c}"] = float(diff / max(np.linalg.norm(Jn[rs, cs]), 1.0))
    return out


def run_check(trials=100, seed=0, threshold=DEFAULT_THRESHOLD, step=DEFAULT_STEP,
              corrupt=None):
    """Worst block errors over ``trials`` random states.

    ``corrupt`` names a block (e.g. ``"dv/g_dir"``) whose analytic value is
    deliberately perturbed; it exists to show the check can fail.
    """
    if corrupt is not None and corrupt not in BLOCK_NAMES:
        raise ValueError(f"unknown block {corrupt!r}; choose from {BLOCK_NAMES}")
    rng = np.random.default_rng(seed)
    worst = {k: 0.0 for k in BLOCK_NAMES}
    for _ in range(trials):
        problem, state = random_instance(rng)
        Ja = problem.block_jacobians(state)[0].copy()
        if corrupt is not None:
            r, c = corrupt.split("/")
            Ja[RESIDUAL_ROWS[r], BLOCK_COLUMNS[c]] += 1e-3 * (1.0 + np.abs(
                Ja[RESIDUAL_ROWS[r], BLOCK_COLUMNS[c]]))
        errs = block_errors(Ja, numeric_jacobian(problem, state, step))
        for k, v in errs.items():
            worst[k] = max(worst[k], v)
    rep = JacobianReport(trials, seed, threshold, worst)
    rep.passed = not rep.failing()
    return rep
