"""Shared pytest plumbing.

The acceptance suite registers one line per criterion through the
``criterion`` fixture; they are echoed after the run so the pass/fail
status of each criterion is visible even when pytest captures stdout.
"""

from contextlib import contextmanager

import pytest


def _lines(config) -> list:
    if not hasattr(config, "_criterion_lines"):
        config._criterion_lines = []
    return config._criterion_lines


@pytest.fixture
def criterion(request):
    """Context manager recording 'name: PASS|FAIL' for the final summary."""

    @contextmanager
    def tracked(name: str):
        lines = _lines(request.config)
        try:
            yield
        except Exception:
            lines.append(f"{name}: FAIL")
            raise
        lines.append(f"{name}: PASS")

    return tracked


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
