import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magsing import oracle
from magsing.subdiff import project_to_hull


def test_pendulum_solution_values():
    u, (dl, dr) = oracle.pendulum_solution(0.5)
    assert u == pytest.approx(2 / np.pi)
    assert (dl, dr) == pytest.approx((2.0, -2.0))
    assert oracle.pendulum_solution(0.0) == (0.0, (0.0, 0.0))
    _, (dl, dr) = oracle.pendulum_solution(0.25)
    assert dl == pytest.approx(np.sqrt(2)) and dr == pytest.approx(np.sqrt(2))


def test_pendulum_solution_solves_hj_off_kink():
    x = np.linspace(0, 1, 2001, endpoint=False)
    x = x[np.abs(x - 0.5) > 1e-9]
    _, (du, _) = oracle.pendulum_solution(x)
    assert np.max(np.abs(0.5 * du**2 + oracle.pendulum_potential(x))) <= 1e-12
    u, _ = oracle.pendulum_solution(x)
    assert np.allclose(u, oracle.pendulum_solution(x + 1.0)[0])


@pytest.mark.parametrize("a, c", [(1.0, 0.5), (0.0, 0.0), (2.0, 2.0)])
def test_magnetic_critical(a, c):
    val, bound = oracle.magnetic_critical(a)
    assert val == pytest.approx(c) and bound == pytest.approx(c)


def test_torus_cut_locus():
    locus = oracle.torus_cut_locus((0.0, 0.0))
    assert locus.lines == (0.5, 0.5)
    assert locus.contains((0.5, 0.3))
    assert not locus.contains((0.3, 0.3))
    assert locus.distance(np.array([0.45, 0.1])) == pytest.approx(0.05)
    pts = locus.sample(64)
    assert np.all(locus.contains(pts))
    assert oracle.hausdorff_to_cut_locus(pts, locus, 64) < 1e-12
    shifted = oracle.torus_cut_locus((0.3, 0.9))
    assert shifted.lines == pytest.approx((0.8, 0.4))


def test_torus_distance_closed_form():
    assert oracle.torus_distance([0.5, 0.5]) == pytest.approx(np.sqrt(0.5))
    assert oracle.torus_distance([0.9, 0.0]) == pytest.approx(0.1)


def test_brute_force_constant_path_at_max_v():
    assert oracle.brute_force_action(oracle.pendulum_system(), [0.0], [0.0], 1.0, 8, 3) == \
        pytest.approx(0.0, abs=1e-9)


def test_brute_force_magnetic_loop():
    sys = oracle.magnetic_circle_system(1.0)
    # the loop x(t) = t at speed s = C1 / (2 C2) = 1 has action -C1/2
    assert oracle.path_action(sys, np.array([[0.0], [1.0]]), 1.0) == pytest.approx(-0.5)
    assert oracle.brute_force_action(sys, [0.0], [0.0], 1.0, 8, 3) == pytest.approx(-0.5, abs=1e-8)


def test_brute_force_straight_segment():
    sys = oracle.torus_distance_system()
    x, y, T = np.array([0.1, 0.1]), np.array([0.3, 0.2]), 0.5
    ell2 = float(np.sum((y - x) ** 2))
    assert oracle.brute_force_action(sys, x, y, T, 8, 2) == pytest.approx(ell2 / (2 * T), rel=1e-8)


def test_brute_force_rejects_large_resolution():
    with pytest.raises(ValueError):
        oracle.brute_force_action(oracle.pendulum_system(), [0.0], [0.1], 1.0, 65)


def test_action_gradient_matches_finite_differences():
    sys = oracle.pendulum_system()
    rng = np.random.default_rng(5)
    z = rng.random(7)
    x, y = np.array([0.0]), np.array([0.3])
    a, g = oracle._action_and_grad(z, sys, x, y, 8, 1.0, 3)
    eps = 1e-7
    num = [(oracle._action_and_grad(z + eps * e, sys, x, y, 8, 1.0, 3)[0]
            - oracle._action_and_grad(z - eps * e, sys, x, y, 8, 1.0, 3)[0]) / (2 * eps)
           for e in np.eye(7)]
    assert np.allclose(g, num, atol=1e-6)


@pytest.mark.parametrize("osys", oracle.oracle_systems(), ids=lambda s: s.name)
def test_domination_with_closed_forms(osys):
    rng = np.random.default_rng(11)
    worst = -np.inf
    for k in range(100):
        x, y = rng.random(osys.dim), rng.random(osys.dim)
        T = rng.uniform(0.1, 1.0)
        A = oracle.brute_force_action(osys, x, y, T, 8, 2, seed=k)
        worst = max(worst, osys.u(y) - osys.u(x) - A - osys.c * T)
    assert worst <= 1e-3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hull_projection_matches_dense_sampling(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(int(rng.integers(2, 6)), 2))
    om = rng.normal(size=2)
    A = rng.normal(size=(2, 2))
    Q = A @ A.T + 0.2 * np.eye(2)
    R = np.linalg.cholesky(Q).T
    p, _ = project_to_hull(P, R, om)
    d = p + om
    exact = 0.5 * d @ Q @ d
    _, brute = oracle.hull_min_brute_force(P, Q, -om, seed=seed % 1000)
    assert abs(exact - brute) <= 1e-6
