import numpy as np
import pytest

from conftest import make_window
from inertial_init.errors import InvalidInput
from inertial_init.init_solver import preintegrate_window, residual_block
from inertial_init.manifold import log_so3, random_rotation
from inertial_init.preintegration import BiasState, NoiseParams, integrate
from inertial_init.simulator import (FLIP_Z, SimConfig, TrajectoryModel, evaluate_model,
                                     make_visual_trajectory, random_scenario, sample_imu, simulate)

G = 9.80665


def test_static_model():
    m = TrajectoryModel(2.0)
    R, p, v, a, w = evaluate_model(m, 1.0)
    assert np.array_equal(R, np.eye(3)) and np.array_equal(v, np.zeros(3))
    assert np.array_equal(a, np.zeros(3)) and np.array_equal(w, np.zeros(3))


def test_single_axis_sinusoid():
    A, f = 0.3, 0.5
    m = TrajectoryModel(2.0, pos_amp=[[A], [0], [0]], pos_freq=[[f], [0], [0]])
    _, _, v, a, _ = evaluate_model(m, 0.0)
    assert a[0] == 0.0
    assert v[0] == pytest.approx(2 * np.pi * f * A, rel=1e-15)


def test_velocity_and_rate_match_finite_differences():
    model, _ = random_scenario(3, duration=5.0)
    h = 1e-6
    for t in np.linspace(0.5, 4.5, 9):
        R0, p0, v, a, w = evaluate_model(model, t)
        Rp, pp, vp, _, _ = evaluate_model(model, t + h)
        Rm, pm, vm, _, _ = evaluate_model(model, t - h)
        assert np.abs((pp - pm) / (2 * h) - v).max() < 1e-6
        assert np.abs((vp - vm) / (2 * h) - a).max() < 1e-6
        w_num = (log_so3(R0.T @ Rp) - log_so3(R0.T @ Rm)) / (2 * h)
        assert np.abs(w_num - w).max() < 1e-6


def test_out_of_range():
    with pytest.raises(InvalidInput):
        evaluate_model(TrajectoryModel(1.0), 1.5)
    with pytest.raises(InvalidInput):
        SimConfig(imu_rate=5.0, keyframe_rate=4.0)
    with pytest.raises(InvalidInput):
        SimConfig(scale=0.0)


def test_static_specific_force():
    R0 = random_rotation(np.random.default_rng(0))
    m = TrajectoryModel(0.5, R0=R0)
    imu = sample_imu(m, SimConfig(noisy=False))
    assert np.allclose(imu.accel, R0.T @ [0, 0, G], atol=1e-14)
    assert np.array_equal(imu.gyro, np.zeros_like(imu.gyro))


def test_noise_free_preintegration_matches_truth():
    sim = make_window(1, noisy=False, bias=True)
    b = sim.config.bias
    for k in range(len(sim.keyframe_index) - 1):
        i, j = sim.keyframe_index[k], sim.keyframe_index[k + 1]
        seg = sim.imu.intervals([sim.times[i], sim.times[j]])[0]
        pre = integrate(seg, b)
        Ri, Rj = sim.R[i], sim.R[j]
        dt = sim.times[j] - sim.times[i]
        g = np.array([0, 0, -G])
        assert np.allclose(pre.delta_R, Ri.T @ Rj, atol=1e-9)
        assert np.allclose(pre.delta_v, Ri.T @ (sim.v[j] - sim.v[i] - g * dt), atol=1e-9)
        assert np.allclose(pre.delta_p, Ri.T @ (sim.p[j] - sim.p[i] - sim.v[i] * dt
                                                - 0.5 * g * dt * dt), atol=1e-9)


def test_strapdown_truth_converges_to_analytic():
    # recorded states integrate the zero-order-hold samples: first-order in dt
    from dataclasses import replace
    model, cfg = random_scenario(2, noisy=False)
    errs = []
    for rate in (200.0, 800.0):
        sim = simulate(model, replace(cfg, imu_rate=rate))
        _, p, v, _, _ = evaluate_model(model, sim.times)
        errs.append((np.abs(sim.p - p).max(), np.abs(sim.v - v).max()))
    for k in range(2):
        assert 3.0 < errs[0][k] / errs[1][k] < 5.0


def test_determinism():
    model, cfg = random_scenario(5, noisy=True)
    a, b = simulate(model, cfg), simulate(model, cfg)
    assert np.array_equal(a.imu.accel, b.imu.accel) and np.array_equal(a.imu.gyro, b.imu.gyro)
    assert np.array_equal(a.visual.positions, b.visual.positions)


def test_noise_statistics():
    m = TrajectoryModel(500.0)
    cfg = SimConfig(noisy=True, seed=3)
    imu = sample_imu(m, cfg)
    assert len(imu) == 100_000
    clean = sample_imu(m, SimConfig(noisy=False))
    for got, clean_v, sigma in ((imu.gyro, clean.gyro, cfg.noise.gyro_noise),
                                (imu.accel, clean.accel, cfg.noise.accel_noise)):
        std = (got - clean_v).std(axis=0)
        assert np.all(np.abs(std / (sigma * np.sqrt(cfg.imu_rate)) - 1) < 0.02)


def test_visual_trajectory():
    sim = make_window(4, noisy=False)
    kf = sim.keyframe_index
    t, R, p, v = sim.times[kf], sim.R[kf], sim.p[kf], sim.v[kf]
    traj, truth = make_visual_trajectory(t, R, p, v, 1.0, np.eye(3))
    assert np.array_equal(traj.positions, p) and np.array_equal(traj.rotations, R)
    assert np.array_equal(truth.R_wg, FLIP_Z)
    half, _ = make_visual_trajectory(t, R, p, v, 2.0, np.eye(3))
    assert np.array_equal(half.positions, p / 2.0)
    with pytest.raises(InvalidInput):
        make_visual_trajectory(t, R, p, v, -1.0, np.eye(3))


@pytest.mark.parametrize("seed", range(5))
def test_end_to_end_consistency(seed):
    sim = make_window(seed, noisy=False, bias=True, keyframe_rate=10.0)
    pre = preintegrate_window(sim.visual, sim.imu, NoiseParams(), sim.truth.bias)
    for i in range(len(pre)):
        assert np.abs(residual_block(sim.truth, pre[i], sim.visual, i)).max() < 1e-8


def test_keyframe_layout():
    sim = make_window(0, n_keyframes=10, keyframe_rate=4.0)
    assert len(sim.keyframe_index) == 10
    assert np.allclose(np.diff(sim.keyframe_times), 0.25, atol=1e-12)
    sim = make_window(0, n_keyframes=10, keyframe_rate=10.0)
    assert len(sim.keyframe_index) == 10


def test_presets_excitation():
    from inertial_init.init_solver import mean_accel_deviation
    for seed in range(5):
        exc = make_window(seed, preset="excited", noisy=False)
        assert mean_accel_deviation(exc.imu) > 0.05 * G
        deg = make_window(seed, preset="degenerate", noisy=False)
        assert mean_accel_deviation(deg.imu) < 1e-9
    with pytest.raises(InvalidInput):
        random_scenario(0, preset="loopy")


def test_random_bias_ranges():
    for seed in range(20):
        _, cfg = random_scenario(seed)
        assert np.all(np.abs(cfg.bias.gyro) <= 0.01) and np.all(np.abs(cfg.bias.accel) <= 0.05)
        assert 0.5 <= cfg.scale <= 20.0
    _, cfg = random_scenario(0, bias=False)
    assert cfg.bias == BiasState()
