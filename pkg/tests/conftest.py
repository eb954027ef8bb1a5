import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from palletbench.config import default_schema, load_schema

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "tests" / "data"
FIXTURES = ROOT / "configs" / "fixtures"


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def fixture_pair_dir() -> Path:
    return FIXTURES


@pytest.fixture
def six_layer():
    return load_schema(DATA / "six_layer.xml")


@pytest.fixture
def grid_schema():
    return default_schema()


# one line per acceptance criterion, filled by test_acceptance and printed
# in the terminal summary so it survives output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
