import numpy as np
import pytest

from swing_impedance.dynamics import FeedForward, SimulationSetup, Trajectory
from swing_impedance.model import BodyModel, SegmentParams, default_model


def random_model(rng):
    def seg(mass, length):
        m = rng.uniform(0.5, 1.5) * mass
        L = rng.uniform(0.8, 1.2) * length
        return SegmentParams(m, m * (rng.uniform(0.2, 0.35) * L) ** 2, L,
                             rng.uniform(0.3, 0.6) * L)

    thigh = seg(6.5, 0.4)
    return BodyModel(thigh, seg(3.0, 0.42), seg(0.9, 0.2), rng.uniform(30, 90),
                     rng.uniform(0.2, 1.0) * thigh.length)


def random_q(rng):
    return np.concatenate([rng.uniform(-1, 1, 1), rng.uniform(-1.5, 1.5, 3)])


def free_setup(model, y0, duration=1.0, fs=1000.0):
    """Unforced, feedback-free simulation setup starting from ``y0``."""
    n = int(round(duration * fs)) + 1
    t = np.arange(n) / fs
    ref = Trajectory(t, np.zeros((n, 4)), np.zeros(n), np.zeros((n, 2)))
    return SimulationSetup(model, FeedForward(t, np.zeros((n, 4))), ref,
                           (0.0, duration), initial_state=y0)


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def record(number, passed, detail):
    """Store one acceptance verdict for the end-of-run summary."""
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
