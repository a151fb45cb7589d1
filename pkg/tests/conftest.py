import pytest

# criterion number -> (passed, details); filled by tests marked with criterion(n)
_RESULTS: dict[int, tuple[bool, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.skipped or not (rep.when == "call" or rep.failed):
        return
    n = mark.args[0]
    ok, details = _RESULTS.get(n, (True, []))
    details = details + [v for k, v in item.user_properties if k == "detail"]
    if rep.failed and rep.when != "call":
        details.append(f"{rep.when} error")
    _RESULTS[n] = (ok and rep.passed, details)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, details = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {'; '.join(details)}")
