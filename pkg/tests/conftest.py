from __future__ import annotations

from pathlib import Path

import pytest

from mocktrial.backend import ScriptedBackend, ScriptFixture
from mocktrial.domain import load_case

FIXTURES = Path(__file__).parent / "fixtures"
CASE_DIR = FIXTURES / "cases"
SCRIPT = FIXTURES / "script_basic.json"

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    if report.when == "setup" and report.skipped:
        _criteria[number] = (title, "SKIP")
    elif report.when == "call":
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        _criteria[number] = (title, status)
    elif report.when == "setup" and report.failed:
        _criteria[number] = (title, "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2} {status:<4} {title}")


@pytest.fixture
def fixture_cases():
    return [load_case(p) for p in sorted(CASE_DIR.glob("*.json"))]


@pytest.fixture
def scripted():
    return ScriptedBackend(ScriptFixture.load(SCRIPT))
