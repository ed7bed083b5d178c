import functools

import numpy as np
import pytest

from monobound.model import DiffusionModel, get_model
from monobound.solver import SolverConfig, solve_qd, solve_st


@functools.lru_cache(maxsize=None)
def solved(name: str, mode: str, n: int = 257):
    """Default-grid solves are shared across test modules."""
    cfg = SolverConfig(n_phi=n, n_x=n)
    model = get_model(name)
    return solve_qd(cfg, model) if mode == "detection" else solve_st(cfg, model)


@pytest.fixture
def unit_model():
    """mu0 = 0, mu1 = 1, sigma = 1, lambda = 1 with unit costs."""
    return DiffusionModel(mu0=0, mu1=1, sigma=1, name="unit")


@pytest.fixture(scope="session")
def trap_model():
    return get_model("paper-trap")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance report -------------------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, label): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    n, label = mark.args
    _ACCEPTANCE[n] = (label, "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        label, status = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}  {status}  {label}")
