import numpy as np
import pytest

from cabin_surrogate.dataset import CabinDataset, split_cases


@pytest.fixture(scope="session")
def small_dataset():
    """Full 2160-case grid rendered at 32x32."""
    return CabinDataset.synthetic(32, 32)


@pytest.fixture(scope="session")
def small_split(small_dataset):
    return split_cases(small_dataset.cases, 0)


@pytest.fixture(scope="session")
def desk_dataset():
    return CabinDataset.synthetic(96, 64)


@pytest.fixture(scope="session")
def desk_split(desk_dataset):
    return split_cases(desk_dataset.cases, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report one line each in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
