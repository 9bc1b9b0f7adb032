import numpy as np
import pytest

from saga_attn.linalg import random_matrix

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def normal():
    def make(rows, cols, seed=0, label="t"):
        return random_matrix(rows, cols, seed, "normal", label=label)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
