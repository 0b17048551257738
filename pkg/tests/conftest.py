import pytest

from killedwalk.mechanisms import build_mechanism, immediate_kill, kemperman
from killedwalk.walk import IncrementLaw


@pytest.fixture
def rademacher() -> IncrementLaw:
    return IncrementLaw.rademacher()


@pytest.fixture
def kem():
    return kemperman(0.3)


@pytest.fixture
def ikill():
    return immediate_kill()


@pytest.fixture
def never():
    return build_mechanism({"family": "never-absorb"})


_LINES = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion, echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
