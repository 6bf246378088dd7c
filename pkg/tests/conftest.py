import numpy as np
import pytest

from enkf_cal.ensemble import MomentEstimate, ObservationModel

# Linear toy: theta ~ N(0, 1), eta = theta, y = 0.8 observed with sd 0.1.
TOY_Y = 0.8
TOY_VAR_Y = 0.01
CONJ_MEAN = 80 / 101  # y / (1 + σ²) for a N(0, 1) prior
CONJ_VAR = 1 / 101  # σ² / (1 + σ²)


@pytest.fixture
def toy_obs():
    return ObservationModel.incidence([0], 1, 1, [TOY_Y], [TOY_VAR_Y])


@pytest.fixture
def linear_toy_moments():
    return MomentEstimate(np.zeros(2), np.ones((2, 2)), 1)


def random_spd(rng, p, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    w = np.geomspace(1.0, cond, p)
    return (Q * w) @ Q.T


_CRITERIA: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def _report(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(line)
        _CRITERIA.append(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
