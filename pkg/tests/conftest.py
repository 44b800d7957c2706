import pytest

from tailor.distributions import Exponential, Lomax
from tailor.grids import grids_for, make_grids
from tailor.solver import policy_iteration, quad_tables


@pytest.fixture(scope="session")
def exp_solved():
    d = Exponential(1.0)
    g = grids_for(d, dt=0.01, y_cut=20.0)
    return d, g, quad_tables(d, g), policy_iteration(d, 1.0, 1.0, g)


@pytest.fixture(scope="session")
def lomax_coarse():
    """Lomax(1, 2.1) on a coarser grid, for tests that only need a converged policy."""
    d = Lomax(1.0, 2.1)
    g = grids_for(d, dt=0.02)
    return d, g, quad_tables(d, g), policy_iteration(d, 1.0, 1.0, g)


@pytest.fixture
def small_grids():
    # 21 states, 14 finite candidates + never
    return make_grids(dt=0.1, y_cut=2.0, theta_fine=1.0, theta_max=4.0, n_log=4, slope=1.0)


# ---------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    label = mark.args[0]
    failed = rep.failed or (rep.when == "setup" and rep.outcome != "passed")
    if rep.when == "call" or failed:
        detail = [f"{k}={v}" for k, v in item.user_properties]
        prev_status, prev_detail = _CRITERIA.get(label, ("PASS", []))
        status = "FAIL" if failed or prev_status == "FAIL" else "PASS"
        if failed:
            detail.append(f"FAILED {item.name}")
        _CRITERIA[label] = (status, prev_detail + detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for label in sorted(_CRITERIA):
        status, detail = _CRITERIA[label]
        tr.write_line(f"{status}  {label}")
        for d in detail:
            tr.write_line(f"        {d}")
