import pytest

_RESULTS: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    cid, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _RESULTS[cid] = (title, "PASS" if rep.passed else "FAIL")


def _order(cid: str):
    digits = "".join(c for c in cid if c.isdigit())
    return int(digits), cid


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_RESULTS, key=_order):
        title, status = _RESULTS[cid]
        terminalreporter.write_line(f"criterion {cid:<3} {status}  {title}")
