import numpy as np
import pytest

from wfmle import MutationRates


@pytest.fixture
def mu():
    return MutationRates(0.02, 0.02)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the one-line outcome of an acceptance criterion."""
    def record(number: int, passed: bool, detail: str):
        _CRITERIA[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_CRITERIA[number])
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
