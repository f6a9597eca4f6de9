"""Session-scoped solutions shared across test modules (each is expensive to build)."""

import numpy as np
import pytest

from magsing import hj_solver, subdiff, systems


@pytest.fixture(scope="session")
def pendulum():
    sys = systems.pendulum(4096)
    u = hj_solver.solve_critical(sys, 0.0)
    return sys, u


@pytest.fixture(scope="session")
def magnetic_circle():
    sys = systems.magnetic_circle(512, 1.0)
    u = hj_solver.solve_critical(sys, 0.5)
    return sys, u


@pytest.fixture(scope="session")
def torus_distance():
    sys = systems.flat_torus(256)
    u = hj_solver.eikonal_field(sys, [(0, 0)])
    return sys, u


@pytest.fixture(scope="session")
def torus_singular(torus_distance):
    sys, u = torus_distance
    return subdiff.singular_set(u, sys, 0.5)


@pytest.fixture(scope="session")
def magnetic_2d():
    sys = systems.magnetic_torus(256)
    crit = hj_solver.estimate_critical_value(sys)
    u = hj_solver.solve_critical(sys, crit.c)
    return sys, crit, u


@pytest.fixture(scope="session")
def magnetic_2d_singular(magnetic_2d):
    sys, crit, u = magnetic_2d
    return subdiff.singular_set(u, sys, crit.c)


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record and assert one acceptance check: ``criterion(number, label, ok, detail)``."""

    def check(number: int, label: str, ok: bool, detail: str):
        ok = bool(ok)
        _CRITERIA.setdefault(number, []).append((label, ok, detail))
        print(f"criterion {number:2d} [{label}]: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {number} [{label}]: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        parts = _CRITERIA[number]
        ok = all(p[1] for p in parts)
        tr.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}")
        for label, pok, detail in parts:
            tr.write_line(f"    {label}: {'PASS' if pok else 'FAIL'}  {detail}")
