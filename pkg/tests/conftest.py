import numpy as np
import pytest

from fluidq import HyperExp, MarkovFluidModel, OnOffModel, OnOffSource

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def single_model():
    """One source, lambda=1, Exp(3) activity, peak rate 2."""
    return OnOffModel((OnOffSource(1.0, HyperExp.exponential(3.0), 2.0),))


@pytest.fixture
def ams_model():
    return OnOffModel(tuple(OnOffSource(1.0, HyperExp.exponential(5.0), 2.0) for _ in range(2)))


@pytest.fixture
def markov2():
    return MarkovFluidModel(np.array([[-1.0, 1.0], [2.0, -2.0]]), np.array([-1.0, 1.0]))


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
