"""Shared pytest configuration.

Collects the one-line verdicts emitted by the acceptance tests and repeats
them in the terminal summary, where pytest's output capture no longer hides
the lines belonging to passing criteria.
"""

VERDICTS = []


def record_verdict(criterion, line):
    VERDICTS.append((criterion, line))


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(VERDICTS):
            terminalreporter.write_line(line)
