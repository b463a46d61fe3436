"""Shared pytest hooks.

The acceptance suite records one verdict line per criterion in
``ACCEPTANCE_LINES``; they are repeated at the end of the session so they
show up even when output capture is on.
"""

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
