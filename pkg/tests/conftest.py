import numpy as np
import pytest

from aslks.rng import SplitMix64

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return SplitMix64(1234)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(criterion: str, passed: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def assert_close(a, b, atol=0.0):
    diff = np.max(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64)))
    assert diff <= atol, f"max abs diff {diff} > {atol}"
