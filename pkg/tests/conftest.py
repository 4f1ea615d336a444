import numpy as np
import pytest

from scne import ncl


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_system(rng, N=60, sizes=(3, 3), lam=0.1, ridge=0.0):
    """Random full-column-rank NCL system with sigmoid-like hidden outputs."""
    H_list = [np.tanh(rng.normal(size=(N, L))) for L in sizes]
    y = rng.normal(size=N)
    return ncl.NclSystem(H_list, y, lam, ridge)


# One summary line per acceptance criterion, printed after the test run.
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = mark.args
        detail = dict(item.user_properties).get("detail", "")
        prev = _CRITERIA.get(number)
        passed = report.outcome == "passed" and (prev is None or prev[1])
        _CRITERIA[number] = (title, passed, detail or (prev[2] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
