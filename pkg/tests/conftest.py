import numpy as np
import pytest

from hamlab.envs import make_env


@pytest.fixture(scope="session")
def dataset_env():
    """The recorded glance grid, built once per session (about a second)."""
    return make_env("dataset")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are repeated in the terminal summary."""

    def emit(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {title}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
