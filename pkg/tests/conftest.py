from pathlib import Path

import pytest

from perfhom.config import load_scenario

ROOT = Path(__file__).resolve().parents[1]
DESK = ROOT / "configs" / "desk.yaml"

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def desk():
    return load_scenario(DESK)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split(":")[0]), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:<20} {'PASS' if ok else 'FAIL'}  {detail}")
