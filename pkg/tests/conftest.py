import numpy as np
import pytest

from laplace_metric.data import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(X, labels, n_classes=None):
    labels = np.asarray(labels)
    return Dataset([f"p{k}" for k in range(labels.size)], np.asarray(X, dtype=float), labels, n_classes)


# one line per acceptance criterion, collected by tests/test_acceptance.py
CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
