import numpy as np
import pytest

from revnorm import data as D
from revnorm import synthetic as S


@pytest.fixture(scope="session")
def small_synthetic():
    """Two clusters x 5 users, 600 steps."""
    return S.generate_dataset(S.two_cluster_spec(users_per_cluster=5, length=600, seed=0))


@pytest.fixture(scope="session")
def small_split(small_synthetic):
    dataset, _ = small_synthetic
    return D.six_way_split(dataset, 0.2, (0.6, 0.2, 0.2), seed=0, spec=D.WindowSpec(40, 10))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion: ``criterion(number, passed, detail)``."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
