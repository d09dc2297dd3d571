import numpy as np
import pytest

from sober.measures import DomainSpec

ACCEPTANCE_LINES = []


def record_acceptance(criterion, passed, detail):
    """Print a PASS/FAIL line now and repeat it in the terminal summary."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_square():
    return DomainSpec(np.array([[0.0, 1.0], [0.0, 1.0]]))
