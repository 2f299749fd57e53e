from __future__ import annotations

import pytest

from ptqplan.quantizer import build_distortion_table
from ptqplan.synth import SyntheticModelSpec, generate_synthetic_model

# Filled by tests/test_acceptance.py; printed at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def table():
    return build_distortion_table(range(1, 9))


@pytest.fixture(scope="session")
def small_model():
    return generate_synthetic_model(SyntheticModelSpec(n_layers=3, dims=[(32, 32)], block=(8, 8), planted_rank=4))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
