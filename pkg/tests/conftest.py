"""Shared pytest plumbing: the acceptance tests append human-readable
result lines (measured values, ratios, runtimes) to ACCEPTANCE_NOTES and
this hook prints them after the test summary."""

ACCEPTANCE_NOTES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_NOTES:
        terminalreporter.section("acceptance notes")
        for line in ACCEPTANCE_NOTES:
            terminalreporter.write_line(line)
