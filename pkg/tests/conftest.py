import numpy as np
import pytest

from prsreplay.core import LabeledExample


def ex(i, *labels, dim=2, task=None):
    return LabeledExample(i, np.zeros(dim), tuple(labels), task=task)


@pytest.fixture
def make_example():
    return ex


# One line per acceptance criterion, filled by test_acceptance and echoed at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
