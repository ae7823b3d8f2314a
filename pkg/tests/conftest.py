import numpy as np
import pytest

# (criterion number, title, passed, detail) rows filled by test_acceptance
ACCEPTANCE_LINES: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE_LINES):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {num:2d}: {title} ({detail})")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
