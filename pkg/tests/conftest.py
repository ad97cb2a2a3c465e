"""Shared test plumbing: the acceptance-criteria result board."""

ACCEPTANCE_RESULTS: list[tuple[str, bool]] = []


def record_result(name: str, ok: bool) -> None:
    ACCEPTANCE_RESULTS.append((name, ok))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
