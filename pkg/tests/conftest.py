import warnings

import numpy as np
import pytest

from qnpe.classical import IsolatedPointWarning


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def quiet_isolated():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IsolatedPointWarning)
        yield


def random_plane(m, n, seed):
    """``m`` points of a random 2-plane in R^n, with the orthonormal basis returned."""
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.normal(size=(n, 2)))[0]
    offset = rng.normal(size=n)
    U = rng.uniform(0.0, 1.0, size=(m, 2))
    return offset + U @ basis.T, basis


def pytest_terminal_summary(terminalreporter):
    lines = [value for status in ("passed", "failed")
             for rep in terminalreporter.stats.get(status, [])
             for key, value in getattr(rep, "user_properties", []) if key == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
