import numpy as np
import pytest

from uepfec.stream import make_block

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def uniform74():
    return make_block([1.0] * 74, 15)


@pytest.fixture
def ramp37():
    return make_block(np.linspace(40.0, 4.0, 37), 7)
