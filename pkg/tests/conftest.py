import pytest

# criterion -> (passed, detail), filled in by the acceptance suite
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record():
    def _record(name: str, passed: bool, detail: str = "") -> bool:
        prev = ACCEPTANCE.get(name, (True, ""))
        joined = "; ".join(d for d in (prev[1], detail) if d)
        ACCEPTANCE[name] = (prev[0] and bool(passed), joined)
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"criterion {name}: {'PASS' if ok else 'FAIL'}  {detail}")
