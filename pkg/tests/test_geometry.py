import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magsing.fieldio import read_field, write_field
from magsing.geometry import (
    EPS_F,
    GeometryError,
    MetricField,
    OneFormField,
    PeriodicGrid,
    PotentialField,
    VectorFieldGrid,
    christoffel,
    christoffel_field,
    conformal_rescale,
    flat_iso,
    loop_integrals,
    periodic_diff,
    periodic_interp,
    sharp,
)

finite = st.floats(-5, 5, allow_nan=False)


def test_grid_basics():
    g = PeriodicGrid(2, 64)
    assert g.h * g.n == pytest.approx(1.0, abs=1e-15)
    assert g.shape == (64, 64)
    assert g.nearest_node([1.0 - 1e-9, 0.5]) == (0, 32)
    with pytest.raises(GeometryError):
        PeriodicGrid(2, 4)
    with pytest.raises(GeometryError):
        PeriodicGrid(3, 16)


@given(st.lists(finite, min_size=2, max_size=2), st.lists(finite, min_size=2, max_size=2))
def test_displacement_is_minimal_image(x, y):
    g = PeriodicGrid(2, 16)
    d = g.displacement(x, y)
    assert np.all(np.abs(d) <= 0.5 + 1e-12)
    assert np.allclose(np.mod(np.asarray(x) + d - np.asarray(y) + 0.5, 1.0), 0.5, atol=1e-9)


def test_interp_exact_at_nodes_and_linear_between():
    g = PeriodicGrid(2, 32)
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(g.shape)
    nodes = g.coords().reshape(-1, 2)
    assert np.array_equal(periodic_interp(g, vals, nodes), vals.reshape(-1))
    lin = np.full(g.shape, 3.0)
    assert np.allclose(periodic_interp(g, lin, rng.random((20, 2))), 3.0)
    # wraps periodically
    x = np.array([[0.3, 0.7]])
    assert np.allclose(periodic_interp(g, vals, x), periodic_interp(g, vals, x + [2.0, -1.0]))


def test_periodic_diff_fourth_order():
    errs = []
    for n in (32, 64):
        g = PeriodicGrid(1, n)
        x = g.axes()[0]
        d = periodic_diff(np.sin(2 * np.pi * x), 0, g.h)
        errs.append(np.max(np.abs(d - 2 * np.pi * np.cos(2 * np.pi * x))))
    assert errs[0] / errs[1] > 14.0


def test_sharp_examples():
    g2 = PeriodicGrid(2, 8)
    X = sharp(OneFormField.constant(g2, [1.0, 0.0]), MetricField.flat(g2))
    assert np.allclose(X.components, [1.0, 0.0])
    conf = conformal_rescale(MetricField.flat(g2), 2.0)
    assert np.allclose(sharp(OneFormField.constant(g2, [1.0, 0.0]), conf).components, [0.5, 0.0])
    diag = MetricField.flat(g2, np.diag([1.0, 4.0]))
    assert np.allclose(sharp(OneFormField.constant(g2, [1.0, 1.0]), diag).components, [1.0, 0.25])
    om = flat_iso(VectorFieldGrid(g2, np.broadcast_to([1.0, 0.0], g2.shape + (2,)).copy()), diag)
    assert np.allclose(om.components, [1.0, 0.0])


def _random_metric(grid, rng):
    xy = grid.coords()
    a = 1.5 + 0.5 * np.sin(2 * np.pi * (xy[..., 0] + rng.random()))
    b = 1.2 + 0.3 * np.cos(2 * np.pi * (xy[..., 1] + rng.random()))
    c = 0.2 * np.sin(2 * np.pi * (xy[..., 0] + xy[..., 1]))
    return MetricField(grid, np.stack([np.stack([a, c], -1), np.stack([c, b], -1)], -2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sharp_flat_roundtrip(seed):
    rng = np.random.default_rng(seed)
    grid = PeriodicGrid(2, 16)
    g = _random_metric(grid, rng)
    om = OneFormField(grid, rng.standard_normal(grid.shape + (2,)))
    back = flat_iso(sharp(om, g), g)
    assert np.max(np.abs(back.components - om.components)) <= 1e-12
    conf = conformal_rescale(g, 2.0)
    back = flat_iso(sharp(om, conf), conf)
    assert np.max(np.abs(back.components - om.components)) <= 1e-12


def test_non_spd_metric_rejected_with_location():
    grid = PeriodicGrid(1, 8)
    g = np.ones(grid.shape + (1, 1))
    g[3] = -1.0
    with pytest.raises(GeometryError, match=r"\(3,\)"):
        MetricField(grid, g)


def test_conformal_rescale():
    grid = PeriodicGrid(1, 64)
    flat = MetricField.flat(grid)
    assert np.allclose(conformal_rescale(flat, 1.0).g, flat.g)
    two = conformal_rescale(flat, 2.0)
    assert np.allclose(two.g, 2.0) and np.allclose(two.inverse, 0.5)
    x = grid.axes()[0]
    f = 0.0 - (np.cos(2 * np.pi * x) - 1.0)  # c - V with c = 0 for the pendulum
    with pytest.raises(GeometryError, match="outside W"):
        conformal_rescale(flat, f)
    tilde = conformal_rescale(flat, f, region=f > EPS_F)
    assert tilde.g[32, 0, 0] == pytest.approx(2.0)
    eye = np.einsum("...ij,...jk->...ik", tilde.g, tilde.inverse)
    assert np.allclose(eye, 1.0, atol=1e-10)


def test_christoffel_flat_and_conformal():
    grid = PeriodicGrid(2, 32)
    assert np.all(christoffel_field(MetricField.flat(grid)) == 0.0)
    g1 = PeriodicGrid(1, 128)
    x = g1.axes()[0]
    f = 2.0 + np.sin(2 * np.pi * x)
    gam = christoffel_field(MetricField.conformal_to_flat(g1, f))[..., 0, 0, 0]
    exact = 2 * np.pi * np.cos(2 * np.pi * x) / (2 * f)
    assert np.max(np.abs(gam - exact)) < 1e-5
    rng = np.random.default_rng(1)
    gm = _random_metric(grid, rng)
    G = christoffel(gm)
    assert np.allclose(G, np.swapaxes(G, -1, -2))
    assert christoffel(gm, (3, 4)).shape == (2, 2, 2)


def test_loop_integrals():
    grid = PeriodicGrid(2, 32)
    om = OneFormField.constant(grid, [1.0, 0.0])
    flat = MetricField.flat(grid)
    assert loop_integrals(om, flat, 0) == pytest.approx((1.0, 0.5))
    assert loop_integrals(om, flat, 1) == pytest.approx((0.0, 0.5))
    x = grid.coords()
    # exact form d(phi) with phi = sin(2 pi x) cos(2 pi y) / (2 pi)
    dphi = np.stack([np.cos(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1]),
                     -np.sin(2 * np.pi * x[..., 0]) * np.sin(2 * np.pi * x[..., 1])], -1)
    for loop in (0, 1):
        for off in (0, 5, 17):
            assert abs(loop_integrals(OneFormField(grid, dphi), flat, loop, off)[0]) < 1e-10
    for a in (0.5, 1.0, 2.0):
        c1, c2 = loop_integrals(OneFormField.constant(grid, [a, 0.0]), flat, 0)
        assert c1**2 / (4 * c2) == pytest.approx(a * a / 2, abs=1e-14)


def test_potential_normalized():
    grid = PeriodicGrid(1, 16)
    V = PotentialField(grid, np.linspace(1.0, 3.0, 16))
    assert V.values.max() == 0.0
    assert V.offset == pytest.approx(3.0)


def test_field_csv_roundtrip(tmp_path):
    grid = PeriodicGrid(2, 8)
    vals = np.random.default_rng(3).standard_normal(grid.shape + (2,)) * 1e3
    write_field(tmp_path / "f.csv", grid, vals, kind="covector")
    g2, back, header = read_field(tmp_path / "f.csv")
    assert g2 == grid and header["kind"] == "covector"
    assert np.max(np.abs(back - vals)) <= 1e-12
