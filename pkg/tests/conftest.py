from __future__ import annotations

import numpy as np
import pytest

from augsearch.augment import SANITY_TABLE, build_op_table
from augsearch.data import make_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sanity_table():
    return build_op_table(SANITY_TABLE)


@pytest.fixture(scope="session")
def small_data():
    return make_synthetic(240, size=8, classes=4, seed=3)


# acceptance criteria report one line each; printed after the test summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def _report(criterion: int, name: str, ok: bool | None, detail: str) -> None:
        status = "N/A" if ok is None else "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES.append(f"[{status}] criterion {criterion} {name}: {detail}")

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
