import numpy as np
import pytest

from phitest.data import synth_gaussian
from phitest.predictors import fit_gbt


@pytest.fixture(scope="session")
def planted():
    beta = np.array([2.0, -1.5, 1.0, 0.0, 0.0, 0.0])
    return synth_gaussian(300, 6, beta, 0.5, seed=11)


@pytest.fixture(scope="session")
def small_gbt():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((120, 4))
    y = np.sin(X[:, 0]) + X[:, 1] * X[:, 2] + 0.1 * rng.standard_normal(120)
    return fit_gbt(X, y, n_trees=20, max_depth=3, seed=1), X


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
