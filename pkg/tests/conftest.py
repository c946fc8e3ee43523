import time

import numpy as np
import pytest

from facestd.basis import generate_synthetic_basis
from facestd.scene import Camera


@pytest.fixture(scope="session")
def basis():
    return generate_synthetic_basis(0)


@pytest.fixture(scope="session")
def small_basis():
    return generate_synthetic_basis(7, v_target=300, dims=(6, 5, 4))


@pytest.fixture(scope="session")
def cam():
    return Camera.centered()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion in the terminal summary
# ---------------------------------------------------------------------------

SUITE_BUDGET_S = 600.0
_results = pytest.StashKey[dict]()
_started = pytest.StashKey[float]()


def pytest_configure(config):
    config.stash[_results] = {}
    config.stash[_started] = time.perf_counter()


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records criterion ``n`` and asserts it."""
    results = request.config.stash[_results]

    def record(n, ok, detail):
        results[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"criterion {n}: {detail}"

    return record


def _elapsed(config):
    return time.perf_counter() - config.stash[_started]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_results, {})
    if not results:
        return
    elapsed = _elapsed(config)
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        if n == 9:
            ok = ok and elapsed < SUITE_BUDGET_S
            detail = f"{detail}; suite elapsed {elapsed:.1f}s (budget {SUITE_BUDGET_S:.0f}s)"
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_sessionfinish(session, exitstatus):
    if session.config.stash.get(_results, {}) and _elapsed(session.config) >= SUITE_BUDGET_S:
        session.exitstatus = pytest.ExitCode.TESTS_FAILED
