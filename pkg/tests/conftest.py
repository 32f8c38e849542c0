import time

import pytest

from penalized_nls.cli import run_sweep
from penalized_nls.config import plateau_config
from penalized_nls.groundstate import solve_canonical

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def timings():
    return {}


@pytest.fixture(scope="session")
def gs_cache():
    cache = {}

    def get(N, p):
        if (N, p) not in cache:
            cache[(N, p)] = solve_canonical(N, p)
        return cache[(N, p)]
    return get


@pytest.fixture(scope="session")
def plateau():
    return plateau_config()


@pytest.fixture(scope="session")
def plateau_sweep(plateau, timings):
    """(ctx, reports, records, diag, threshold) ordered by decreasing eps."""
    t0 = time.perf_counter()
    out = run_sweep(plateau, jobs=1)
    timings["sweep"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def plateau_ctx(plateau_sweep):
    return plateau_sweep[0]


@pytest.fixture(scope="session")
def report_by_eps(plateau_sweep):
    return {rep.eps: rep for rep in plateau_sweep[1]}
