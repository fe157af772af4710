import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_CRITERIA = {}


@pytest.fixture
def record_criterion():
    """Record a PASS/FAIL verdict; several checks of one criterion are merged."""

    def record(num, ok, detail):
        prev = _CRITERIA.get(num)
        if prev is not None:
            ok = ok and prev[0]
            detail = prev[1] + "; " + detail
        _CRITERIA[num] = (ok, detail)
        print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        ok, detail = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
