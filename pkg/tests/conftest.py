import io
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# (number, title, passed, detail) for every acceptance criterion that ran
ACCEPTANCE: list = []


@pytest.fixture
def io_sink():
    return io.StringIO()


@pytest.fixture
def criterion(capsys):
    """Record and print one pass/fail line; the test asserts afterwards."""

    def report(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
