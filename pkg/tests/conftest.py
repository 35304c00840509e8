from __future__ import annotations

import pytest

from .helpers import two_player, well_posed


@pytest.fixture
def toy():
    return well_posed(6, 80, seed=3, tie_rate=0.1)


@pytest.fixture
def ab31():
    return two_player(3, 1)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record and print one pass/fail line for an acceptance criterion."""

    def report(number: int, name: str, passed: bool, detail: str) -> bool:
        line = f"[criterion {number:2d}] {'PASS' if passed else 'FAIL'} {name}: {detail}"
        print(line)
        _CRITERIA.append(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
