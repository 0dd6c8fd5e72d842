from __future__ import annotations

import pytest

_LINES = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """record(number, ok, detail): one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_LINES, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
