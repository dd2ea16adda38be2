"""Acceptance bookkeeping: one PASS/FAIL line per criterion in the summary."""

import pytest

_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.skipped:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        n = mark.args[0]
        detail = dict(item.user_properties).get("detail", "")
        if rep.failed and not detail:
            detail = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
        prev = _RESULTS.get(n)
        # several tests may share a criterion; any failure marks it failed
        status = "FAIL" if rep.failed or (prev and prev[0] == "FAIL") else "PASS"
        joined = "; ".join(d for d in ((prev[1] if prev else ""), detail) if d)
        _RESULTS[n] = (status, joined)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
