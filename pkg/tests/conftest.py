import pytest

_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion.

    Call ``criterion(name, detail)`` once the measured values are known; the
    outcome is taken from the test's own result.
    """
    entry = {}

    def record(name: str, detail: str = "") -> None:
        entry["name"], entry["detail"] = name, detail

    yield record
    if entry:
        rep = getattr(request.node, "rep_call", None)
        passed = rep is not None and rep.passed
        _RESULTS[entry["name"]] = (passed, entry["detail"])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_RESULTS, key=lambda n: int(n.split()[0])):
        passed, detail = _RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
