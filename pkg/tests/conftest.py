"""Shared pytest plumbing.

The acceptance tests each record a one-line verdict; pytest captures stdout,
so the lines are replayed in a terminal section after the run where they
stay visible regardless of capture settings.
"""

_verdicts: list[str] = []


def record_verdict(line: str) -> None:
    _verdicts.append(line)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance verdicts")
    for line in sorted(_verdicts):
        terminalreporter.write_line(line)
