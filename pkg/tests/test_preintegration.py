import numpy as np
import pytest

from inertial_init.errors import InvalidInput
from inertial_init.manifold import exp_so3, log_so3
from inertial_init.preintegration import (BiasState, ImuSample, ImuStream, NoiseParams, chain,
                                          corrected_deltas, integrate, repreintegrate)

G = 9.80665


def random_segment(rng, duration=0.25, rate=200.0):
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    gyro = rng.normal(0, 0.5, 3) + rng.normal(0, 0.2, (n, 3))
    accel = rng.normal(0, 2.0, 3) + np.array([0, 0, G]) + rng.normal(0, 0.5, (n, 3))
    return ImuStream(t, gyro, accel, t_end=duration)


def batch_integrate(dts, gyro, accel):
    """Independent, vectorized strapdown of ``(B, K, 3)`` measurement batches."""
    B = gyro.shape[0]
    R = np.tile(np.eye(3), (B, 1, 1))
    v = np.zeros((B, 3))
    p = np.zeros((B, 3))
    for k, dt in enumerate(dts):
        acc = np.einsum("bij,bj->bi", R, accel[:, k])
        p = p + v * dt + 0.5 * acc * dt * dt
        v = v + acc * dt
        R = R @ exp_so3(gyro[:, k] * dt)
    return R, v, p


def monte_carlo_covariance(stream, noise, n, rng):
    dts = np.diff(np.append(stream.t, stream.t_end))
    Rc, vc, pc = batch_integrate(dts, stream.gyro[None], stream.accel[None])
    K = len(stream.t)
    sg = noise.gyro_noise / np.sqrt(dts)[None, :, None]
    sa = noise.accel_noise / np.sqrt(dts)[None, :, None]
    g = stream.gyro[None] + rng.standard_normal((n, K, 3)) * sg
    a = stream.accel[None] + rng.standard_normal((n, K, 3)) * sa
    R, v, p = batch_integrate(dts, g, a)
    err = np.concatenate([log_so3(np.swapaxes(Rc, -1, -2) @ R), v - vc, p - pc], axis=1)
    return np.cov(err.T)


# ------------------------------------------------------------------ examples

def test_stationary():
    T, n = 0.5, 100
    t = np.arange(n) * T / n
    pre = integrate(ImuStream(t, np.zeros((n, 3)), np.tile([0, 0, G], (n, 1)), t_end=T))
    assert np.allclose(pre.delta_R, np.eye(3), atol=0)
    assert np.allclose(pre.delta_v, [0, 0, G * T], rtol=1e-12)
    assert np.allclose(pre.delta_p, [0, 0, 0.5 * G * T * T], rtol=1e-12)
    assert pre.dt == pytest.approx(T, rel=1e-15)


def test_pure_rotation():
    T, n, w = 0.3, 60, 0.7
    t = np.arange(n) * T / n
    pre = integrate(ImuStream(t, np.tile([0, 0, w], (n, 1)), np.zeros((n, 3)), t_end=T))
    assert np.allclose(pre.delta_R, exp_so3([0, 0, w * T]), atol=1e-13)
    assert np.array_equal(pre.delta_v, np.zeros(3))


def test_sample_list_input_matches_stream(rng):
    s = random_segment(rng)
    samples = [ImuSample(float(t), g, a) for t, g, a in zip(s.t, s.gyro, s.accel)]
    a = integrate(samples, t_end=s.t_end)
    b = integrate(s)
    assert np.array_equal(a.delta_R, b.delta_R) and np.array_equal(a.cov, b.cov)


def test_errors():
    with pytest.raises(InvalidInput):
        integrate([])
    with pytest.raises(InvalidInput):
        ImuStream([0.0, 0.0], np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(InvalidInput):
        integrate(ImuStream([0.1, 0.0], np.zeros((2, 3)), np.zeros((2, 3)), check=False))
    with pytest.raises(InvalidInput):
        integrate([ImuSample(0.0, np.zeros(3), np.zeros(3))])  # one sample, no end time
    with pytest.raises(InvalidInput):
        NoiseParams(gyro_noise=0.0)
    with pytest.raises(InvalidInput):
        BiasState([np.nan, 0, 0])


def test_single_sample_with_end_time():
    pre = integrate([ImuSample(0.0, np.zeros(3), np.array([0, 0, G]))], t_end=0.01)
    assert pre.dt == 0.01
    assert np.allclose(pre.delta_v, [0, 0, G * 0.01])


def test_immutable(rng):
    pre = integrate(random_segment(rng))
    with pytest.raises(ValueError):
        pre.delta_v[0] = 1.0
    with pytest.raises(AttributeError):
        pre.dt = 2.0


# ------------------------------------------------------------------ covariance

def test_covariance_monte_carlo():
    rng = np.random.default_rng(7)
    noise = NoiseParams()
    s = random_segment(rng)
    pre = integrate(s, BiasState(), noise)
    C = monte_carlo_covariance(s, noise, 10_000, rng)
    S = pre.cov
    mask = np.abs(S) > 0.01 * np.abs(S).max()
    rel = np.abs(C - S)[mask] / np.abs(S)[mask]
    assert rel.max() < 0.15, rel.max()


def test_covariance_psd_and_monotone(rng):
    s = random_segment(rng, duration=0.5)
    prev = -1.0
    for n in range(1, len(s.t) + 1):
        sub = ImuStream(s.t[:n], s.gyro[:n], s.accel[:n], t_end=s.t[n - 1] + 1 / 200)
        cov = integrate(sub).cov
        assert np.array_equal(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() >= -1e-12
        tr = np.trace(cov)
        assert tr >= prev
        prev = tr


def test_covariance_ordering():
    # (dphi, dv, dp): rotation noise accumulates as sigma_g^2 T per axis, velocity as sigma_a^2 T
    s = ImuStream(np.arange(50) / 200, np.zeros((50, 3)), np.tile([0, 0, G], (50, 1)), t_end=0.25)
    pre = integrate(s, noise=NoiseParams(gyro_noise=1e-2, accel_noise=1e-12))
    assert np.trace(pre.cov[0:3, 0:3]) == pytest.approx(3 * 1e-4 * 0.25, rel=1e-9)
    pre = integrate(s, noise=NoiseParams(gyro_noise=1e-12, accel_noise=1e-2))
    assert np.trace(pre.cov[0:3, 0:3]) < 1e-15
    assert np.trace(pre.cov[3:6, 3:6]) == pytest.approx(3 * 1e-4 * 0.25, rel=1e-9)


# ------------------------------------------------------------------ bias model

def _shift(b, gyro=0.0, accel=0.0, axis=0):
    g, a = b.gyro.copy(), b.accel.copy()
    g[axis] += gyro
    a[axis] += accel
    return BiasState(g, a)


def test_corrected_deltas_zero_update(rng):
    pre = integrate(random_segment(rng), BiasState([0.01, 0, 0], [0, 0.02, 0]))
    dR, dv, dp = corrected_deltas(pre, pre.bias)
    assert np.array_equal(dR, pre.delta_R)
    assert np.array_equal(dv, pre.delta_v) and np.array_equal(dp, pre.delta_p)


def test_corrected_deltas_gyro_shift(rng):
    s = random_segment(rng)
    pre = integrate(s)
    b = BiasState([1e-3, 0, 0], [0, 0, 0])
    dR, _, _ = corrected_deltas(pre, b)
    ref = integrate(s, b)
    assert np.linalg.norm(log_so3(dR.T @ ref.delta_R)) < 1e-4 * np.linalg.norm(log_so3(ref.delta_R))


def test_corrected_deltas_accel_shift(rng):
    s = random_segment(rng)
    pre = integrate(s)
    b = BiasState([0, 0, 0], [5e-2, 0, 0])
    _, dv, dp = corrected_deltas(pre, b)
    ref = integrate(s, b)
    # accelerometer bias enters linearly, so the first-order update is exact
    assert np.allclose(dv, ref.delta_v, atol=1e-12)
    assert np.allclose(dp, ref.delta_p, atol=1e-12)


@pytest.mark.parametrize("trial", range(5))
def test_bias_jacobians_finite_difference(trial):
    rng = np.random.default_rng(100 + trial)
    s = random_segment(rng)
    lin = BiasState(rng.normal(0, 0.01, 3), rng.normal(0, 0.05, 3))
    pre = integrate(s, lin)
    h = 1e-5
    num = {k: np.zeros((3, 3)) for k in ("J_R_g", "J_v_g", "J_v_a", "J_p_g", "J_p_a")}
    for ax in range(3):
        pg, mg = integrate(s, _shift(lin, gyro=h, axis=ax)), integrate(s, _shift(lin, gyro=-h, axis=ax))
        pa, ma = integrate(s, _shift(lin, accel=h, axis=ax)), integrate(s, _shift(lin, accel=-h, axis=ax))
        num["J_R_g"][:, ax] = (log_so3(pre.delta_R.T @ pg.delta_R)
                               - log_so3(pre.delta_R.T @ mg.delta_R)) / (2 * h)
        num["J_v_g"][:, ax] = (pg.delta_v - mg.delta_v) / (2 * h)
        num["J_p_g"][:, ax] = (pg.delta_p - mg.delta_p) / (2 * h)
        num["J_v_a"][:, ax] = (pa.delta_v - ma.delta_v) / (2 * h)
        num["J_p_a"][:, ax] = (pa.delta_p - ma.delta_p) / (2 * h)
    for k, J in num.items():
        ana = getattr(pre, k)
        assert np.linalg.norm(ana - J) < 1e-4 * np.linalg.norm(J), k


# ------------------------------------------------------------------ re-preintegration

def test_repreintegrate_noop_and_definitional(rng):
    s = random_segment(rng)
    lin = BiasState([0.002, -0.001, 0.0], [0.01, 0.0, -0.02])
    pre = integrate(s, lin)
    again = repreintegrate([pre], lin)[0]
    assert np.array_equal(again.delta_R, pre.delta_R)
    assert np.array_equal(again.delta_v, pre.delta_v)
    assert np.array_equal(again.cov, pre.cov)
    new = BiasState([0.01, 0.0, 0.0], [0.0, 0.05, 0.0])
    re = repreintegrate([pre], new)[0]
    dR, dv, dp = corrected_deltas(re, new)
    assert np.array_equal(dR, re.delta_R) and np.array_equal(dv, re.delta_v)
    direct = integrate(s, new)
    assert np.array_equal(re.delta_R, direct.delta_R)
    assert re.bias == new


def test_repreintegrate_requires_samples(rng):
    pre = integrate(random_segment(rng), keep_samples=False)
    with pytest.raises(InvalidInput):
        repreintegrate([pre], BiasState())


def test_chaining(rng):
    s = random_segment(rng, duration=0.5)
    whole = integrate(s)
    t1 = 0.2
    first, second = s.intervals([0.0, t1, s.t_end])
    dR, dv, dp, dt = chain(integrate(first), integrate(second))
    assert np.allclose(dR, whole.delta_R, atol=1e-9)
    assert np.allclose(dv, whole.delta_v, atol=1e-9)
    assert np.allclose(dp, whole.delta_p, atol=1e-9)
    assert dt == pytest.approx(whole.dt, abs=1e-15)


def test_interval_partition():
    t = np.arange(10) * 0.1
    s = ImuStream(t, np.arange(30.0).reshape(10, 3), np.zeros((10, 3)))
    a, b = s.intervals([0.0, 0.5, 0.95])
    # the sample exactly at 0.5 begins the second interval
    assert np.allclose(a.t, t[:5]) and b.t[0] == 0.5
    assert a.t_end == 0.5 and b.t_end == 0.95
    # an interval starting between samples carries over the previous measurement
    (c,) = s.intervals([0.25, 0.45])
    assert c.t[0] == 0.25 and np.array_equal(c.gyro[0], s.gyro[2])
    assert integrate(c).dt == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(InvalidInput):
        s.intervals([-1.0, 0.5])
    with pytest.raises(InvalidInput):
        s.intervals([0.5])
