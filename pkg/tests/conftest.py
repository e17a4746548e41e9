import pytest

from heaplive import apgraph as apg
from heaplive.alias import compute_points_to

from .helpers import load

# Every graph built during the test run is scanned for the identity and
# determinism invariants (see the autouse fixture below).
apg.DEBUG = True

@pytest.fixture(autouse=True)
def graph_invariants():
    before = len(apg.VIOLATIONS)
    yield
    fresh = apg.VIOLATIONS[before:]
    assert not fresh, f"graph invariant violations: {fresh[:5]}"


@pytest.fixture(scope="session")
def fig3():
    p = load("fig3")
    return p, compute_points_to(p)


@pytest.fixture(scope="session")
def fig7():
    p = load("fig7")
    return p, compute_points_to(p)


# ---------------------------------------------------------------- acceptance summary

CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and rep.passed:
        return
    n, title = mark.args
    entry = CRITERIA.setdefault(n, {"title": title, "ok": True, "seconds": 0.0})
    entry["seconds"] += rep.duration
    if not rep.passed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        e = CRITERIA[n]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {e['title']} ({e['seconds']:.1f}s)")
