_acceptance_results = []
_acceptance_details = {}


def record_acceptance_detail(name, lines):
    """Stash lines a criterion must emit; printed in the summary even when
    the test passes (plain prints are captured and hidden by pytest)."""
    _acceptance_details[name] = list(lines)


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance_results.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance_results:
        verdict = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{verdict}  {name}")
        for line in _acceptance_details.get(name, []):
            terminalreporter.write_line(f"        {line}")
