import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report():
    """Record a one-line acceptance verdict, printed in the terminal summary."""
    def _report(criterion: int, ok: bool, detail: str):
        ACCEPTANCE_LINES.append(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
