import numpy as np
import pytest

from inertial_init.simulator import random_scenario, simulate


def make_window(seed, noisy=False, bias=True, preset="excited", scale=None, n_keyframes=10,
                keyframe_rate=4.0, duration=None):
    """Simulated window: returns the full :class:`SimOutput`."""
    model, cfg = random_scenario(seed, n_keyframes=n_keyframes, keyframe_rate=keyframe_rate,
                                 preset=preset, noisy=noisy, scale=scale, bias=bias,
                                 duration=duration)
    return simulate(model, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------------------------ acceptance summary

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``criterion(key, ok, detail)`` records a PASS/FAIL line and asserts ``ok``."""
    def record(key, ok, detail):
        ACCEPTANCE[key] = (bool(ok), detail)
        assert ok, f"criterion {key}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>3}: {'PASS' if ok else 'FAIL'}  {detail}")
