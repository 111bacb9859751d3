import pytest

_ACCEPTANCE = {}


@pytest.fixture
def report():
    """Record one acceptance line: report(n, ok, detail)."""

    def _report(n, ok, detail):
        _ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        return bool(ok)

    return _report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
