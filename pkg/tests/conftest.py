"""Shared pytest wiring: collect acceptance verdict lines and echo them in
the terminal summary so they survive output capturing."""

VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
