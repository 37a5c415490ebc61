import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion and echo it."""

    def record(n: int, name: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {n:2d} [{name}]: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
        _ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
