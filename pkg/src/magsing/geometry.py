"""Periodic grids, metric fields, 1-forms and the musical isomorphisms.

All fields live on the unit torus ``[0, 1)^dim`` (``dim`` is 1 or 2) sampled
on ``n`` nodes per axis.  Array layout is ``(n,) * dim`` followed by the
component axes, with ``indexing="ij"`` so that axis 0 is ``x`` and axis 1 is
``y``.  Fields are immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_F = 1e-8


class GeometryError(ValueError):
    """Invalid geometric input (non-SPD metric, bad conformal factor, ...)."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PeriodicGrid:
    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GeometryError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8:
            raise GeometryError(f"need n >= 8 nodes per axis, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    def axes(self) -> list[np.ndarray]:
        return [np.arange(self.n) * self.h for _ in range(self.dim)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def node_coord(self, index) -> np.ndarray:
        return np.asarray(index, dtype=float).reshape(self.dim) * self.h

    def nearest_node(self, x) -> tuple[int, ...]:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        return tuple(int(i) % self.n for i in np.rint(x / self.h).astype(int))

    def wrap(self, x):
        return np.mod(x, 1.0)

    def displacement(self, x, y) -> np.ndarray:
        """Minimal-image displacement ``y - x`` on the torus."""
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        return d - np.rint(d)

    def distance(self, x, y) -> np.ndarray:
        return np.linalg.norm(self.displacement(x, y), axis=-1)


def periodic_interp(grid: PeriodicGrid, values: np.ndarray, x) -> np.ndarray:
    """Multilinear periodic interpolation of a node field.

    ``values`` has shape ``grid.shape + comp``; ``x`` has shape ``(..., dim)``.
    Returns shape ``x.shape[:-1] + comp``.  Exact at nodes.
    """
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, grid.dim)
    n = grid.n
    t = np.mod(pts, 1.0) * n
    i0 = np.floor(t).astype(np.int64)
    w = t - i0
    # snap round-off so nodes are reproduced bit-exactly
    snap = w > 1.0 - 1e-9
    i0 = np.where(snap, i0 + 1, i0)
    w = np.where(snap | (w < 1e-9), 0.0, w)
    i0 %= n
    comp = values.shape[grid.dim:]
    out = np.zeros((pts.shape[0],) + comp)
    for corner in np.ndindex(*(2,) * grid.dim):
        idx = []
        wt = np.ones(pts.shape[0])
        for a, c in enumerate(corner):
            idx.append((i0[:, a] + c) % n)
            wt = wt * (w[:, a] if c else 1.0 - w[:, a])
        nz = wt != 0.0
        if not np.any(nz):
            continue
        vals = values[tuple(ix[nz] for ix in idx)]
        out[nz] += wt[nz].reshape((-1,) + (1,) * len(comp)) * vals
    return out.reshape(x.shape[:-1] + comp)


def periodic_diff(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth-order central difference along ``axis`` with periodic wrap."""
    return (
        -np.roll(a, -2, axis) + 8.0 * np.roll(a, -1, axis)
        - 8.0 * np.roll(a, 1, axis) + np.roll(a, 2, axis)
    ) / (12.0 * h)


@dataclass(frozen=True, eq=False)
class MetricField:
    """Symmetric positive-definite matrix field ``g_ij`` on a periodic grid.

    ``kind`` is ``"flat"`` for a constant metric or ``"conformal"`` when the
    field was produced by scaling a base metric with ``factor``.
    """

    grid: PeriodicGrid
    g: np.ndarray
    kind: str = "flat"
    factor: np.ndarray | None = None
    _inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = self.grid.dim
        g = np.asarray(self.g, dtype=float)
        if g.shape != self.grid.shape + (d, d):
            raise GeometryError(f"metric shape {g.shape} does not match grid {self.grid.shape}")
        if not np.allclose(g, np.swapaxes(g, -1, -2), rtol=0, atol=1e-12):
            raise GeometryError("metric is not symmetric")
        eig = np.linalg.eigvalsh(g)
        bad = np.argwhere(~(eig[..., 0] > 0.0))
        if bad.size:
            raise GeometryError(f"metric not positive definite at node {tuple(int(i) for i in bad[0])}")
        object.__setattr__(self, "g", _frozen(g))
        object.__setattr__(self, "_inv", _frozen(np.linalg.inv(g)))
        if self.factor is not None:
            object.__setattr__(self, "factor", _frozen(self.factor))

    @classmethod
    def flat(cls, grid: PeriodicGrid, matrix=None) -> "MetricField":
        m = np.eye(grid.dim) if matrix is None else np.asarray(matrix, dtype=float)
        g = np.broadcast_to(m, grid.shape + (grid.dim, grid.dim)).copy()
        return cls(grid, g, "flat")

    @classmethod
    def conformal_to_flat(cls, grid: PeriodicGrid, f: np.ndarray) -> "MetricField":
        return conformal_rescale(cls.flat(grid), f)

    @property
    def inverse(self) -> np.ndarray:
        """Dual metric ``g^{ij}`` at every node."""
        return self._inv

    def at(self, x) -> np.ndarray:
        return periodic_interp(self.grid, self.g, x)

    def dual_at(self, x) -> np.ndarray:
        return np.linalg.inv(self.at(x))

    def norm(self, x, v) -> np.ndarray:
        g = self.at(x)
        v = np.asarray(v, dtype=float)
        return np.sqrt(np.einsum("...i,...ij,...j->...", v, g, v))

    def dual_norm(self, x, p) -> np.ndarray:
        gi = self.dual_at(x)
        p = np.asarray(p, dtype=float)
        return np.sqrt(np.einsum("...i,...ij,...j->...", p, gi, p))


@dataclass(frozen=True, eq=False)
class OneFormField:
    grid: PeriodicGrid
    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if c.shape != self.grid.shape + (self.grid.dim,):
            raise GeometryError(f"1-form shape {c.shape} does not match grid")
        if not np.all(np.isfinite(c)):
            raise GeometryError("1-form has non-finite components")
        object.__setattr__(self, "components", _frozen(c))

    @classmethod
    def constant(cls, grid: PeriodicGrid, coeffs) -> "OneFormField":
        coeffs = np.asarray(coeffs, dtype=float).reshape(grid.dim)
        return cls(grid, np.broadcast_to(coeffs, grid.shape + (grid.dim,)).copy())

    @classmethod
    def zero(cls, grid: PeriodicGrid) -> "OneFormField":
        return cls.constant(grid, np.zeros(grid.dim))

    def at(self, x) -> np.ndarray:
        return periodic_interp(self.grid, self.components, x)


@dataclass(frozen=True, eq=False)
class VectorFieldGrid:
    grid: PeriodicGrid
    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if c.shape != self.grid.shape + (self.grid.dim,):
            raise GeometryError(f"vector field shape {c.shape} does not match grid")
        object.__setattr__(self, "components", _frozen(c))

    def at(self, x) -> np.ndarray:
        return periodic_interp(self.grid, self.components, x)


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Potential normalized so that its maximum over the nodes is exactly 0.

    ``offset`` is the constant that was subtracted from the raw values.
    """

    grid: PeriodicGrid
    values: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise GeometryError(f"potential shape {v.shape} does not match grid")
        top = float(v.max())
        object.__setattr__(self, "values", _frozen(v - top))
        object.__setattr__(self, "offset", float(self.offset) + top)

    @classmethod
    def zero(cls, grid: PeriodicGrid) -> "PotentialField":
        return cls(grid, np.zeros(grid.shape))

    def at(self, x) -> np.ndarray:
        return periodic_interp(self.grid, self.values, x)


def sharp(omega: OneFormField, g: MetricField) -> VectorFieldGrid:
    """Raise an index: ``X^i = g^{ij} omega_j``."""
    if omega.grid != g.grid:
        raise GeometryError("1-form and metric live on different grids")
    return VectorFieldGrid(g.grid, np.einsum("...ij,...j->...i", g.inverse, omega.components))


def flat_iso(X: VectorFieldGrid, g: MetricField) -> OneFormField:
    """Lower an index: ``omega_i = g_ij X^j``."""
    if X.grid != g.grid:
        raise GeometryError("vector field and metric live on different grids")
    return OneFormField(g.grid, np.einsum("...ij,...j->...i", g.g, X.components))


def conformal_rescale(g: MetricField, f, eps_f: float = EPS_F, region=None) -> MetricField:
    """Return ``f * g``; its dual is ``g^{-1} / f``.

    ``region`` is a boolean node mask where the rescaled metric will be
    evaluated; ``f`` must exceed ``eps_f`` there.  Outside the region the
    factor is clamped to ``eps_f`` so the field stays SPD.
    """
    grid = g.grid
    f = np.broadcast_to(np.asarray(f, dtype=float), grid.shape)
    region = np.ones(grid.shape, bool) if region is None else np.asarray(region, bool)
    bad = region & ~(f > eps_f)
    if bad.any():
        nodes = [tuple(int(i) for i in b) for b in np.argwhere(bad)[:5]]
        raise GeometryError(
            f"conformal factor <= {eps_f:g} at {int(bad.sum())} node(s) of the requested "
            f"region (outside W), e.g. {nodes}"
        )
    fc = np.where(region, f, np.maximum(f, eps_f))
    return MetricField(grid, g.g * fc[..., None, None], "conformal", fc)


def metric_derivatives(g: MetricField) -> np.ndarray:
    """``dg[..., l, i, j] = d_l g_ij`` by periodic fourth-order differences."""
    h = g.grid.h
    return np.stack([periodic_diff(g.g, axis, h) for axis in range(g.grid.dim)], axis=-3)


def christoffel_field(g: MetricField) -> np.ndarray:
    """Christoffel symbols ``Gamma[..., k, i, j]`` at every node."""
    dg = metric_derivatives(g)
    # t[l, i, j] = d_i g_jl + d_j g_il - d_l g_ij
    t = (
        np.einsum("...ijl->...lij", dg)
        + np.einsum("...jil->...lij", dg)
        - dg
    )
    return 0.5 * np.einsum("...kl,...lij->...kij", g.inverse, t)


def christoffel(g: MetricField, node=None) -> np.ndarray:
    """Christoffel symbols at one node (index tuple) or on the whole grid."""
    gam = christoffel_field(g)
    if node is None:
        return gam
    return gam[tuple(int(i) % g.grid.n for i in np.atleast_1d(node))]


def loop_integrals(omega: OneFormField, g: MetricField, loop: int, offset: int = 0):
    """Line integral of ``omega`` and half the ``g``-energy of a coordinate loop.

    The loop is the coordinate circle along axis ``loop`` through the node
    line with index ``offset`` on the other axis, at unit parameter speed.
    Returns ``(C1, C2)``.
    """
    grid = g.grid
    if not 0 <= loop < grid.dim:
        raise GeometryError(f"loop axis {loop} out of range")
    sl: list = [offset % grid.n] * grid.dim
    sl[loop] = slice(None)
    sl = tuple(sl)
    c1 = float(np.mean(omega.components[sl][..., loop]))
    c2 = 0.5 * float(np.mean(g.g[sl][..., loop, loop]))
    return c1, c2


def line_index(grid: PeriodicGrid, loop: int, offset: int) -> tuple:
    sl: list = [offset % grid.n] * grid.dim
    sl[loop] = slice(None)
    return tuple(sl)
