import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from unmixkit.spectra import SpectralLibrary  # noqa: E402


def make_library(columns, names=None, grid=None):
    columns = np.asarray(columns, dtype=float)
    m, n = columns.shape
    if names is None:
        names = [f"s{i}" for i in range(n)]
    if grid is None:
        grid = 2.0 + 0.01 * np.arange(m)
    return SpectralLibrary(tuple(names), np.asarray(grid, dtype=float), columns)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance clause and return the overall verdict."""

    def _report(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
