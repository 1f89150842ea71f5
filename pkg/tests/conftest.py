from pathlib import Path

import pytest

from retrofit.ingest import parse_model

HERE = Path(__file__).resolve().parent
FIXTURES = HERE / "fixtures"
ROOT = HERE.parent
RAC_MODEL = ROOT / "src" / "retrofit" / "data" / "rac.json"
SAMPLES = ROOT / "docs" / "samples"


def load_fixture(name: str):
    model = parse_model((FIXTURES / name).read_bytes())
    assert not isinstance(model, list), model
    return model


@pytest.fixture
def three_measures():
    return load_fixture("three_measures.json")


@pytest.fixture
def uncovered():
    return load_fixture("uncovered.json")


@pytest.fixture
def rac():
    model = parse_model(RAC_MODEL.read_bytes())
    assert not isinstance(model, list), model
    return model


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
