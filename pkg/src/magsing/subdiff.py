"""Reachable gradients, superdifferentials and the minimal-energy selection.

At a point ``x`` the reachable gradients are approximated by clustering the
central-difference gradients of differentiable nodes in a small ball; the
superdifferential is their convex hull and ``p_sharp`` minimizes
``H(x, .)`` over it, i.e. it is the ``g*``-projection of ``-omega`` onto the
hull.  The singularity indicator is ``c - H(x, p_sharp)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.ndimage import distance_transform_edt, maximum_filter
from scipy.spatial import ConvexHull, QhullError

from .geometry import PeriodicGrid, periodic_interp
from .hj_solver import MagneticSystem, WeakKamField, central_gradient, differentiable_mask

SINGULAR, BOUNDARY, REGULAR, OUTSIDE = "Singular", "Boundary", "Regular", "Outside"
CLASS_CODES = {REGULAR: 0, BOUNDARY: 1, SINGULAR: 2, OUTSIDE: -1}


class SubdiffError(RuntimeError):
    pass


def default_delta(h: float) -> float:
    return max(10.0 * h, 0.02)


def default_theta(h: float) -> float:
    return max(6.0 * h, 0.05)


@dataclass
class GradientFan:
    x: np.ndarray
    reachable: np.ndarray
    hamiltonians: np.ndarray
    hull: np.ndarray
    p_sharp: np.ndarray
    indicator: float
    samples: int = 0

    def to_dict(self):
        return {
            "x": self.x.tolist(),
            "reachable": self.reachable.tolist(),
            "hamiltonians": self.hamiltonians.tolist(),
            "hull": self.hull.tolist(),
            "p_sharp": self.p_sharp.tolist(),
            "indicator": self.indicator,
            "samples": self.samples,
        }


class GradientData:
    """Differentiability mask, central gradients and their Jacobians, computed once.

    Gradients sampled at a node ``y`` near the query point ``x`` are carried
    to ``x`` by the first-order Taylor step ``Du(y) + D^2u(y) (x - y)``, so a
    smooth ``u`` yields one reachable gradient up to ``O(r^2)`` instead of a
    spread of size ``O(r)``.
    """

    def __init__(self, u: WeakKamField, diff_factor: float = 5.0):
        self.grid = u.grid
        vals = np.nan_to_num(np.asarray(u.u), nan=0.0)
        self.grad = central_gradient(u.grid, vals)
        h = u.grid.h
        # hess[..., i, j] = d_j (d_i u)
        self.hess = np.stack(
            [(np.roll(self.grad, -1, a) - np.roll(self.grad, 1, a)) / (2.0 * h)
             for a in range(u.grid.dim)], -1)
        self.mask = differentiable_mask(u.grid, vals, diff_factor) & np.asarray(u.active)
        self.active = np.asarray(u.active)
        self.band = _distance_to_mask(u.grid, self.mask)

    def ball(self, x, radius, max_radius=None, widen: bool = False):
        """Differentiable nodes near ``x`` and their gradients carried to ``x``.

        The ball radius is ``radius`` plus the distance from ``x`` to the
        nearest differentiable node, capped at ``max_radius`` (``8h``), so a
        point inside a non-differentiable band reaches the branches on both
        sides.  With ``widen`` the added distance is instead twice the
        largest distance to the differentiable set over nodes within
        ``2 * radius`` of ``x``, which bounds the local band thickness; flow
        curves use this so that points running along the edge of a thick or
        jagged band do not lose the far branch from one step to the next.
        Returns ``(nodes, gradients, radius_used)``.
        """
        grid = self.grid
        max_radius = 8.0 * grid.h if max_radius is None else max_radius
        x = np.asarray(x, dtype=float).reshape(grid.dim)
        k = int(np.ceil(max_radius / grid.h)) + 1
        base = np.floor(np.mod(x, 1.0) / grid.h).astype(int)
        rng = np.arange(-k, k + 2)
        offs = np.stack(np.meshgrid(*([rng] * grid.dim), indexing="ij"), -1).reshape(-1, grid.dim)
        nodes = np.unique((base + offs) % grid.n, axis=0)
        dist = np.linalg.norm(grid.displacement(x, nodes * grid.h), axis=-1)
        near = dist <= 2.0 * radius * (1.0 + 1e-9)
        reach = 0.0
        if widen and near.any():
            reach = 2.0 * float(self.band[tuple(nodes[near].T)].max())
        keep = self.mask[tuple(nodes.T)]
        nodes, dist = nodes[keep], dist[keep]
        if len(nodes) == 0 or dist.min() > max_radius:
            return nodes[:0], np.zeros((0, grid.dim)), max_radius
        r = min(radius + max(float(dist.min()), reach), max_radius)
        nodes = nodes[dist <= r * (1.0 + 1e-9)]
        ix = tuple(nodes.T)
        back = grid.displacement(nodes * grid.h, x)
        return nodes, self.grad[ix] + np.einsum("kij,kj->ki", self.hess[ix], back), r


def _distance_to_mask(grid, mask: np.ndarray) -> np.ndarray:
    """Periodic Euclidean distance from every node to the nearest ``True`` node."""
    if not mask.any():
        return np.full(mask.shape, np.inf)
    tiled = np.tile(~mask, (3,) * grid.dim)
    d = distance_transform_edt(tiled) * grid.h
    centre = tuple(slice(grid.n, 2 * grid.n) for _ in range(grid.dim))
    return d[centre]


def _dual_factor(sys: MagneticSystem, x):
    """Upper-triangular ``R`` with ``g*(x) = R^T R`` so ``|R p|`` is the ``g*`` norm."""
    ginv = periodic_interp(sys.grid, sys.metric.inverse, np.asarray(x, float).reshape(1, -1))[0]
    return np.linalg.cholesky(ginv).T, ginv


def cluster_gradients(grads: np.ndarray, R: np.ndarray, theta: float) -> np.ndarray:
    """Complete-linkage clusters (merge radius ``theta`` in the ``g*`` metric); returns means."""
    z = grads @ R.T
    if len(grads) == 1:
        return grads.copy()
    spread = np.max(np.linalg.norm(z[:, None, :] - z[None, :, :], axis=-1))
    if spread <= theta:
        return grads.mean(axis=0, keepdims=True)
    labels = fcluster(linkage(z, method="complete"), t=theta, criterion="distance")
    means = np.array([grads[labels == k].mean(axis=0) for k in np.unique(labels)])
    order = np.lexsort(means.T[::-1])
    return means[order]


def reachable_gradients(u: WeakKamField, x, radius=None, sys: MagneticSystem | None = None,
                        theta=None, data: GradientData | None = None, widen: bool = False):
    """Cluster representatives of the reachable gradients at ``x``.

    Returns ``(reachable, hamiltonians, samples)``; ``hamiltonians`` is
    ``None`` when ``sys`` is not supplied.
    """
    grid = u.grid
    radius = 3.0 * grid.h if radius is None else float(radius)
    if not 2.0 * grid.h - 1e-12 <= radius <= 8.0 * grid.h + 1e-12:
        raise ValueError(f"ball radius must lie in [2h, 8h], got {radius / grid.h:.3g}h")
    theta = default_theta(grid.h) if theta is None else theta
    data = data if data is not None else GradientData(u)
    _, grads, _ = data.ball(x, radius, widen=widen)
    if len(grads) == 0:
        raise SubdiffError("fully singular neighborhood; increase r")
    if sys is not None:
        R, _ = _dual_factor(sys, x)
    else:
        R = np.eye(grid.dim)
    reach = cluster_gradients(grads, R, theta)
    ham = None
    if sys is not None:
        xx = np.broadcast_to(np.asarray(x, float).reshape(grid.dim), reach.shape)
        ham = sys.hamiltonian(xx, reach)
    return reach, ham, len(grads)


def _closest_on_segment(a, b, t):
    d = b - a
    dd = float(d @ d)
    if dd <= 0.0:
        return a.copy()
    s = float(np.clip((t - a) @ d / dd, 0.0, 1.0))
    return a + s * d


def _hull_vertices_2d(z, tol=1e-12):
    """Hull vertices of 2D points in counter-clockwise order, or ``None`` if collinear."""
    if len(z) < 3:
        return None
    centered = z - z.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= tol * max(1.0, sv[0]):
        return None
    try:
        hull = ConvexHull(z)
    except QhullError:
        return None
    return hull.vertices


def project_to_hull(points: np.ndarray, R: np.ndarray, omega: np.ndarray):
    """``g*``-closest point of ``conv(points)`` to ``-omega``.

    ``R`` is the upper-triangular factor with ``g* = R^T R``.  Returns the
    projection and the hull vertices (in covector coordinates).  Equidistant
    candidates are broken towards the lexicographically smallest covector.
    """
    points = np.atleast_2d(np.asarray(points, float))
    z = points @ R.T
    t = -(R @ omega)
    if len(points) == 1 or np.max(np.abs(z - z[0])) <= 1e-12:
        return points[0].copy(), points[:1].copy()
    Rinv = np.linalg.inv(R)
    dim = points.shape[1]
    if dim == 1:
        lo, hi = np.argmin(z[:, 0]), np.argmax(z[:, 0])
        zs = np.clip(t, z[lo], z[hi])
        return (Rinv @ zs), points[[lo, hi]].copy()
    verts = _hull_vertices_2d(z)
    if verts is None:
        # collinear: extremes along the principal direction
        centered = z - z.mean(axis=0)
        _, _, vt = np.linalg.svd(centered)
        proj = centered @ vt[0]
        lo, hi = np.argmin(proj), np.argmax(proj)
        zs = _closest_on_segment(z[lo], z[hi], t)
        return Rinv @ zs, points[[lo, hi]].copy()
    zv = z[verts]
    m = len(zv)
    inside = True
    for k in range(m):
        a, b = zv[k], zv[(k + 1) % m]
        e = b - a
        cross = e[0] * (t[1] - a[1]) - e[1] * (t[0] - a[0])
        if cross < -1e-13 * max(1.0, float(e @ e)):
            inside = False
            break
    if inside:
        return -omega.astype(float).copy(), points[verts].copy()
    cands = [_closest_on_segment(zv[k], zv[(k + 1) % m], t) for k in range(m)]
    dists = np.array([np.linalg.norm(c - t) for c in cands])
    best = dists.min()
    near = [Rinv @ cands[k] for k in range(m) if dists[k] <= best + 1e-14]
    near.sort(key=lambda p: tuple(p))
    return near[0], points[verts].copy()


def momentum_selection(reachable, sys: MagneticSystem, c: float, x):
    """Minimizer of ``H(x, .)`` over the hull of ``reachable`` and the indicator.

    Returns ``(p_sharp, indicator, hull_vertices)``.
    """
    reachable = np.atleast_2d(np.asarray(reachable, float))
    if reachable.size == 0:
        raise SubdiffError("no reachable gradients")
    x = np.asarray(x, float).reshape(sys.grid.dim)
    R, _ = _dual_factor(sys, x)
    om = periodic_interp(sys.grid, sys.omega.components, x.reshape(1, -1))[0]
    p, hull = project_to_hull(reachable, R, om)
    ind = float(c - sys.hamiltonian(x, p))
    return p, ind, hull


def gradient_fan(u: WeakKamField, sys: MagneticSystem, c: float, x, radius=None, theta=None,
                 data: GradientData | None = None, widen: bool = False) -> GradientFan:
    reach, ham, ns = reachable_gradients(u, x, radius, sys, theta, data, widen)
    p, ind, hull = momentum_selection(reach, sys, c, x)
    return GradientFan(np.asarray(x, float).reshape(-1), reach, ham, hull, p, ind, ns)


def classify(indicator: float, delta: float) -> str:
    if indicator > delta:
        return SINGULAR
    if abs(indicator) <= delta:
        return BOUNDARY
    return REGULAR


@dataclass
class SingularSet:
    grid: PeriodicGrid
    indicator: np.ndarray
    classes: np.ndarray
    clusters: np.ndarray
    delta: float
    theta: float
    radius: float
    mask: np.ndarray = field(init=False)
    cut_approx: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mask = self.classes == CLASS_CODES[SINGULAR]
        m = self.mask.astype(np.uint8)
        self.cut_approx = maximum_filter(m, size=3, mode="wrap").astype(bool)

    def points(self) -> np.ndarray:
        return np.argwhere(self.mask) * self.grid.h

    def write_csv(self, path):
        path = Path(path)
        names = {v: k for k, v in CLASS_CODES.items()}
        with open(path, "w") as fh:
            cols = ["i", "j"][: self.grid.dim]
            fh.write(",".join(cols + ["indicator", "class"]) + "\n")
            for idx in np.ndindex(*self.grid.shape):
                fh.write(",".join([str(i) for i in idx] + [repr(float(self.indicator[idx])),
                                                            names[int(self.classes[idx])]]) + "\n")
        return path


def _ball_offsets(grid: PeriodicGrid, radius: float):
    k = int(np.ceil(radius / grid.h))
    rng = np.arange(-k, k + 1)
    offs = np.stack(np.meshgrid(*([rng] * grid.dim), indexing="ij"), -1).reshape(-1, grid.dim)
    return offs[np.linalg.norm(offs, axis=1) * grid.h <= radius * (1.0 + 1e-9)]


def singular_set(u: WeakKamField, sys: MagneticSystem, c: float, radius=None, delta=None,
                 theta=None) -> SingularSet:
    """Classify every node; nodes outside the admissible region are ``Outside``.

    Differentiable nodes whose ball gradients all lie within ``theta`` of
    each other form a single cluster and are handled in bulk; the remaining
    nodes go through the full clustering and hull projection.
    """
    grid = u.grid
    h = grid.h
    radius = 3.0 * h if radius is None else float(radius)
    delta = default_delta(h) if delta is None else delta
    theta = default_theta(h) if theta is None else theta
    data = GradientData(u)
    offs = _ball_offsets(grid, radius)
    axes = tuple(range(grid.dim))
    cnt = np.zeros(grid.shape)
    gsum = np.zeros(grid.shape + (grid.dim,))
    gmin = np.full(grid.shape + (grid.dim,), np.inf)
    gmax = np.full(grid.shape + (grid.dim,), -np.inf)
    for o in offs:
        shift = tuple(-int(v) for v in o)
        m = np.roll(data.mask, shift, axes)
        gr = np.roll(data.grad, shift, axes) - h * np.einsum(
            "...ij,j->...i", np.roll(data.hess, shift, axes), o.astype(float))
        cnt += m
        gsum += np.where(m[..., None], gr, 0.0)
        gmin = np.where(m[..., None], np.minimum(gmin, gr), gmin)
        gmax = np.where(m[..., None], np.maximum(gmax, gr), gmax)
    lam = np.max(np.linalg.eigvalsh(sys.metric.inverse), axis=-1)
    span = np.where(cnt > 0, np.sqrt(lam * np.sum((gmax - gmin) ** 2, -1)), np.inf)
    simple = data.mask & (span <= theta)
    mean = gsum / np.maximum(cnt, 1)[..., None]
    ind = np.where(simple, c - sys.hamiltonian_nodes(mean), np.nan)
    nclus = np.where(simple, 1, 0)
    coords = grid.coords()
    for idx in map(tuple, np.argwhere(data.active & ~simple)):
        fan = gradient_fan(u, sys, c, coords[idx], radius, theta, data)
        ind[idx] = fan.indicator
        nclus[idx] = len(fan.reachable)
    classes = np.full(grid.shape, CLASS_CODES[OUTSIDE], dtype=int)
    act = data.active
    classes[act & (ind > delta)] = CLASS_CODES[SINGULAR]
    classes[act & (np.abs(ind) <= delta)] = CLASS_CODES[BOUNDARY]
    classes[act & (ind < -delta)] = CLASS_CODES[REGULAR]
    return SingularSet(grid, ind, classes, nclus, delta, theta, radius)


def dump_fans(path, fans):
    Path(path).write_text(json.dumps([f.to_dict() for f in fans], indent=2) + "\n")
