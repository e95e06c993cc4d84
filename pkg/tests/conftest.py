import pytest

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; call with (ok, detail) before asserting."""
    name = request.node.name

    def record(ok: bool, detail: str) -> bool:
        _ACCEPTANCE.append((name, bool(ok), detail))
        print(f"\nACCEPTANCE {'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
