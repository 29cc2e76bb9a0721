from pathlib import Path

import pytest

from fedshap import knn
from fedshap.data import load_adult, load_census_csv, train_test_split
from fedshap.explainer import Workspace

ROOT = Path(__file__).resolve().parents[1]
ADULT = ROOT / "data" / "adult.data"

_acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log():
    def record(criterion: str, passed: bool, detail: str = "") -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
        _acceptance_lines.append(line)
        print(line)

    return record


@pytest.fixture(scope="session")
def adult_path():
    if not ADULT.is_file():
        pytest.skip("data/adult.data not present (see scripts/fetch_adult.py)")
    return ADULT


@pytest.fixture(scope="session")
def adult_raw(adult_path):
    return load_census_csv(adult_path)


@pytest.fixture(scope="session")
def adult(adult_path):
    return load_adult(adult_path)


@pytest.fixture(scope="session")
def adult_split(adult):
    return train_test_split(adult, 0.8, 0)


@pytest.fixture(scope="session")
def adult_model(adult_split):
    return knn.fit(adult_split[0], 5)


@pytest.fixture(scope="session")
def workspace(adult_split, adult_model):
    train, test = adult_split
    return Workspace(train, test, adult_model)
