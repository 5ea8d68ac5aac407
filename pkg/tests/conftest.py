from __future__ import annotations

import pytest

_RESULTS: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else ("XFAIL" if hasattr(rep, "wasxfail") else "FAIL")
    label = f"{mark.args[0]}" + (f" ({mark.args[1]})" if len(mark.args) > 1 else "")
    _RESULTS[label] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, (status, detail) in _RESULTS.items():
        terminalreporter.write_line(f"criterion {label}: {status}  {detail}")
