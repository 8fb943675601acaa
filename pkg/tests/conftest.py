import numpy as np
import pytest

from hamflow import kernels
from hamflow.core import GaussianMixture


@pytest.fixture
def gauss1d():
    return GaussianMixture(np.array([1.0]), np.zeros((1, 1)), np.array([1.0]))


@pytest.fixture
def gmm1d():
    return GaussianMixture(np.array([0.4, 0.6]), np.array([[-2.0], [2.0]]), np.array([1.0, 1.0]))


@pytest.fixture
def gmm2d():
    return GaussianMixture(np.array([0.5, 0.5]), np.array([[-1.5, 0.0], [1.5, 1.0]]), np.array([0.5, 0.5]))


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request, monkeypatch):
    """Run a test once per kernel backend (compiled and numpy)."""
    mod = kernels.available_backends()[request.param]
    for name in ("gmm_logpdf_score", "leapfrog_gmm", "mean_pairwise_distance"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line for an acceptance criterion and assert on it."""

    def record(number, ok, message):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {message}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
