import numpy as np
import pytest

from am2cascade.model import reference_params
from oracles import ACCEPTANCE_LINES


@pytest.fixture
def p0():
    return reference_params()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
