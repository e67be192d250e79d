import sys
from pathlib import Path

import pytest

HERE = Path(__file__).parent


@pytest.fixture
def sum_model_cmd():
    """Line-protocol test double: answers each row with the sum of its fields."""
    return f"{sys.executable} {HERE / 'helpers' / 'echo_sum.py'}"


@pytest.fixture
def nan_model_cmd():
    return f"{sys.executable} {HERE / 'helpers' / 'echo_sum.py'} --nan-row 1"


ACCEPTANCE = []


@pytest.fixture
def record():
    """Log one acceptance line: ``record(number, passed, detail)``."""

    def _record(number, passed, detail):
        ACCEPTANCE.append((number, bool(passed), detail))
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
