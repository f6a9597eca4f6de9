import numpy as np
import pytest
from scipy.integrate import solve_ivp

from magsing import flow, subdiff
from magsing.flow import (COMPLETED, LEFT_W, NOT_APPLICABLE, PASS, STALLED, FlowError, integrate_g1,
                          integrate_g2, rescaled_time, uniqueness_probe, verify_invariance,
                          verify_reparam)


def _line_flow_reference(y0, T):
    # on the cut line x = 1/2 of the distance to the origin: y' = y / sqrt(1/4 + y^2)
    sol = solve_ivp(lambda t, y: y / np.sqrt(0.25 + y**2), (0, T), [y0], rtol=1e-12, atol=1e-14)
    return float(sol.y[0, -1])


def test_torus_g1_follows_cut_line(torus_distance):
    sys, u = torus_distance
    h = sys.grid.h
    tr = integrate_g1(u, sys, 0.5, [0.5, 0.25], 0.2, h / 2)
    assert tr.status == COMPLETED
    assert np.max(np.abs(tr.points[:, 0] - 0.5)) <= 3 * h
    assert abs(tr.end[1] - _line_flow_reference(0.25, 0.2)) <= 3 * h
    v = verify_invariance(tr, subdiff.default_delta(h))
    assert v.verdict == PASS and v.min_indicator >= 0.2


def test_trajectory_invariants(torus_distance):
    sys, u = torus_distance
    h = sys.grid.h
    step = h / 2
    tr = integrate_g1(u, sys, 0.5, [0.5, 0.25], 0.1, step)
    assert np.all(np.diff(tr.times) > 0)
    speed = np.sqrt(2 * 0.5)  # sup |p + omega| with c - V = 1/2
    jumps = np.linalg.norm(np.diff(tr.points, axis=0), axis=1)
    assert np.all(jumps <= step * (speed + 1))
    assert np.all(np.isfinite(tr.indicator))


def test_pendulum_stationary(pendulum):
    sys, u = pendulum
    h = sys.grid.h
    for integ in (integrate_g1, integrate_g2):
        tr = integ(u, sys, 0.0, [0.5], 0.2, 8 * h)
        assert np.max(np.abs(tr.points[:, 0] - 0.5)) <= 2 * h
        assert verify_invariance(tr, subdiff.default_delta(h)).min_indicator >= 1.5


def test_smooth_start_is_straight_ray(torus_distance):
    sys, u = torus_distance
    h = sys.grid.h
    tr = integrate_g1(u, sys, 0.5, [0.25, 0.25], 0.2, h / 2)
    expect = 0.25 + 0.2 / np.sqrt(2)
    assert np.allclose(tr.end, [expect, expect], atol=3 * h + h / 2)
    assert verify_invariance(tr, subdiff.default_delta(h)).verdict == NOT_APPLICABLE


def test_g2_equals_g1_for_unit_gap(torus_distance):
    sys, u = torus_distance
    h = sys.grid.h
    # V = 0 and c = 1 give f = 1, so both fields coincide
    a = integrate_g1(u, sys, 1.0, [0.5, 0.25], 0.05, h / 2)
    b = integrate_g2(u, sys, 1.0, [0.5, 0.25], 0.05, h / 2)
    assert np.max(np.abs(a.points - b.points)) <= 1e-12


def test_reparam_constant_gap(torus_distance):
    sys, u = torus_distance
    h = sys.grid.h
    step = h / 2
    k = 2.0
    g1 = integrate_g1(u, sys, k, [0.5, 0.25], 0.1, step)
    s = rescaled_time(g1, sys, k)
    assert np.allclose(s, k * g1.times)
    g2 = integrate_g2(u, sys, k, [0.5, 0.25], k * 0.1, k * step)
    rep = verify_reparam(g1, g2, sys, k)
    assert rep.max_pointwise <= 2 * step * 1.0 + 1e-12
    assert rep.monotone


def test_reparam_pendulum_smooth_start(pendulum):
    sys, u = pendulum
    h = sys.grid.h
    step = 8 * h
    g1 = integrate_g1(u, sys, 0.0, [0.25], 0.1, step)
    sT = rescaled_time(g1, sys, 0.0)[-1]
    g2 = integrate_g2(u, sys, 0.0, [0.25], sT, step * float(np.mean(-sys.V)))
    rep = verify_reparam(g1, g2, sys, 0.0)
    assert rep.frechet <= 5 * (step + h)


def test_reparam_status_mismatch(pendulum, torus_distance):
    sys, u = pendulum
    ok = integrate_g1(u, sys, 0.0, [0.25], 0.01, 1e-3)
    bad = integrate_g1(u, sys, 0.0, [0.0], 0.01, 1e-3)
    assert bad.status == LEFT_W
    with pytest.raises(FlowError):
        verify_reparam(ok, bad, sys, 0.0)


def test_left_w_and_stalled(torus_distance):
    sys, u = torus_distance
    h = sys.grid.h
    tr = integrate_g1(u, sys, 0.5, [0.01, 0.0], 0.1, h / 2)
    assert tr.status == LEFT_W and len(tr.times) == 1
    data = subdiff.GradientData(u)
    data.mask = np.zeros_like(data.mask)
    tr = integrate_g1(u, sys, 0.5, [0.25, 0.25], 0.1, h / 2, data=data)
    assert tr.status == STALLED and "fully singular" in tr.message


def test_trajectory_csv(tmp_path, torus_distance):
    sys, u = torus_distance
    tr = integrate_g1(u, sys, 0.5, [0.5, 0.25], 0.01, sys.grid.h / 2)
    lines = tr.write_csv(tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x,y,indicator,p_sharp_norm"
    assert len(lines) == len(tr.times) + 1


def test_determinism(torus_distance):
    sys, u = torus_distance
    a = integrate_g1(u, sys, 0.5, [0.5, 0.25], 0.05, sys.grid.h / 2)
    b = integrate_g1(u, sys, 0.5, [0.5, 0.25], 0.05, sys.grid.h / 2)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.indicator, b.indicator)


def test_uniqueness_probe_pendulum(pendulum):
    sys, u = pendulum
    h = sys.grid.h
    rep = uniqueness_probe(u, sys, 0.0, [0.5], 0.1, 8 * h)
    assert rep.max_distance <= 2 * h
    assert rep.passed


def test_uniqueness_probe_torus(torus_distance):
    sys, u = torus_distance
    h = sys.grid.h
    rep = uniqueness_probe(u, sys, 0.5, [0.5, 0.25], 0.2, h / 2)
    assert rep.max_distance <= 5 * (h + 1 / 16)
    assert rep.passed
    assert set(rep.to_dict()) >= {"labels", "distances", "max_distance", "bound", "pass"}


def test_energy_gap_field(magnetic_2d):
    sys, crit, _ = magnetic_2d
    f = flow.EnergyGapField.from_system(sys, crit.c)
    assert np.all(f.f[f.mask] > 0)
    assert f.mask.all()
