from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance = []


@pytest.fixture
def fixtures():
    return FIXTURES


def pytest_runtest_logreport(report):
    # Setup only matters when it stops the test from running.
    if report.when != "call" and not (report.when == "setup" and not report.passed):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    outcome = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
    _acceptance.append((report.nodeid.split("::")[-1], outcome, report))


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, report in _acceptance:
        crit = dict(report.user_properties).get("criterion", (name, ""))
        line = f"[{outcome}] criterion {crit[0]}: {crit[1]}"
        if outcome == "SKIP" and isinstance(report.longrepr, tuple):
            line += f"  ({report.longrepr[2]})"
        terminalreporter.write_line(line)
    terminalreporter.section("acceptance criteria by number")
    groups: dict[str, list[str]] = {}
    for name, outcome, report in _acceptance:
        crit = dict(report.user_properties).get("criterion", (name, ""))
        groups.setdefault(str(crit[0]).rstrip("abcdefgh"), []).append(outcome)
    for num, outcomes in groups.items():
        if "FAIL" in outcomes:
            verdict = "FAIL"
        elif "PASS" in outcomes:
            verdict = "PASS"
        else:
            verdict = "SKIP"
        passed = outcomes.count("PASS")
        note = f"{passed}/{len(outcomes)} checks passed"
        if "SKIP" in outcomes:
            note += f", {outcomes.count('SKIP')} skipped"
        terminalreporter.write_line(f"[{verdict}] criterion {num} ({note})")
