"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

VERDICTS = {}


def record(criterion, passed, detail):
    VERDICTS[criterion] = (bool(passed), detail)
    print(f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(VERDICTS, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
        ok, detail = VERDICTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}")
