"""Collects acceptance verdicts and prints them at the end of the session."""

import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """``verdict("AC5", ok, detail)`` records one PASS/FAIL line and returns ``ok``."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
