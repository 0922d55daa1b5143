import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# Verdict lines queued by the acceptance tests; echoed after the run so
# they survive pytest's output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
