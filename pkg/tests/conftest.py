import pytest

_RESULTS = []


@pytest.fixture
def criterion(request):
    """Run one acceptance check; records a printable pass/fail line that the
    terminal summary emits even when stdout capture is on."""

    def run(fn):
        name = request.node.name.removeprefix("test_")
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed criterion is a failed criterion
            ok, detail = False, f"error: {exc!r}"
        _RESULTS.append((name, bool(ok), detail))
        assert ok, f"{name}: {detail}"

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _RESULTS:
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{name}: {status}  [{detail}]")
