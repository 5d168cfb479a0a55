from __future__ import annotations

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
CDNOW = os.path.join(DATA_DIR, "CDNOW_master.txt.gz")



@pytest.fixture
def cdnow_path():
    if not os.path.exists(CDNOW):
        pytest.skip("CDNow data file missing")
    return CDNOW


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
