import pytest

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    def _record(criterion: int, ok: bool, detail: str):
        prev = ACCEPTANCE.get(criterion, (True, ""))
        joined = "; ".join(x for x in (prev[1], detail) if x)
        ACCEPTANCE[criterion] = (prev[0] and bool(ok), joined)
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}")
