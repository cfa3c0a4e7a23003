import os

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("default")

os.environ.setdefault("GRAPHNLS_CHECK_INVARIANTS", "1")

# acceptance tests record one line each; printed at the end of the session
ACCEPTANCE_LINES = {}


@pytest.fixture
def record_criterion():
    def rec(k, passed, detail):
        line = f"CRITERION {k:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[k] = line
        print(line)
        return passed
    return rec


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
