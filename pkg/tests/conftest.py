import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mixguard.mds import catalog_get  # noqa: E402

_acceptance = []


@pytest.fixture(scope="session")
def led():
    return catalog_get("LED")


@pytest.fixture(scope="session")
def midori_mc():
    return catalog_get("Midori64-MC")


@pytest.fixture(scope="session")
def klein():
    return catalog_get("KLEIN")


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))
    elif report.when == "setup" and report.outcome != "passed" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{mark}] {name}")
