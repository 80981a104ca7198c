import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_scan(leaves, u):
    """Reference prefix search: first i with u < leaves[0] + ... + leaves[i]."""
    acc = 0.0
    for i, p in enumerate(leaves):
        acc += p
        if u < acc:
            return i
    raise ValueError("u beyond total")
