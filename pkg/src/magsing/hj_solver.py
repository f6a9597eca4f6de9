"""Critical value and weak KAM solutions of magnetic Hamilton-Jacobi equations.

The Hamiltonian is ``H(x, p) = 1/2 g*(p + omega, p + omega) + V(x)`` and the
Lagrangian ``L(x, v) = 1/2 g(v, v) - omega(v) - V(x)``.  A weak KAM solution
at level ``c`` solves ``||Du + omega||_{g*} = sqrt(2 (c - V))``; it is
computed as the Mane-type distance from a point of the projected Aubry set,
using an upwind control scheme (see :mod:`magsing._kernels`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .geometry import (
    EPS_F,
    MetricField,
    OneFormField,
    PeriodicGrid,
    PotentialField,
    line_index,
    loop_integrals,
    periodic_interp,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Numerical failure; ``history`` carries residuals when available."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


@dataclass(frozen=True, eq=False)
class MagneticSystem:
    grid: PeriodicGrid
    metric: MetricField
    omega: OneFormField
    potential: PotentialField
    name: str = "custom"

    def __post_init__(self):
        for part in (self.metric, self.omega, self.potential):
            if part.grid != self.grid:
                raise ValueError("all fields of a MagneticSystem must share the grid")

    @property
    def V(self) -> np.ndarray:
        return self.potential.values

    def _fields_at(self, x):
        x = np.asarray(x, dtype=float)
        ginv = periodic_interp(self.grid, self.metric.inverse, x)
        om = periodic_interp(self.grid, self.omega.components, x)
        V = periodic_interp(self.grid, self.potential.values, x)
        return ginv, om, V

    def hamiltonian(self, x, p):
        """``H(x, p)`` at (possibly interpolated) points ``x``; broadcasts over ``p``."""
        ginv, om, V = self._fields_at(x)
        q = np.asarray(p, dtype=float) + om
        return 0.5 * np.einsum("...i,...ij,...j->...", q, ginv, q) + V

    def hamiltonian_gradient_p(self, x, p):
        """``H_p(x, p) = (p + omega)^sharp``."""
        ginv, om, _ = self._fields_at(x)
        q = np.asarray(p, dtype=float) + om
        return np.einsum("...ij,...j->...i", ginv, q)

    def lagrangian(self, x, v):
        x = np.asarray(x, dtype=float)
        g = periodic_interp(self.grid, self.metric.g, x)
        om = periodic_interp(self.grid, self.omega.components, x)
        V = periodic_interp(self.grid, self.potential.values, x)
        v = np.asarray(v, dtype=float)
        return 0.5 * np.einsum("...i,...ij,...j->...", v, g, v) - np.sum(om * v, -1) - V

    def hamiltonian_nodes(self, p):
        """``H`` at every node for a covector field ``p`` of shape ``grid.shape + (dim,)``."""
        q = p + self.omega.components
        return 0.5 * np.einsum("...i,...ij,...j->...", q, self.metric.inverse, q) + self.V

    def energy_gap(self, c: float) -> np.ndarray:
        return c - self.V


# ---------------------------------------------------------------------------
# critical value
# ---------------------------------------------------------------------------


@dataclass
class LoopCertificate:
    axis: int
    offset: int
    C1: float
    C2: float
    mean_V: float
    bound: float
    loop_critical: float


@dataclass
class CriticalValueResult:
    estimate: float
    lambdas: list
    c_lambda: list
    iterations: list
    loop_bound: float
    certificate: float
    c: float
    loops: list = field(default_factory=list)

    def to_dict(self):
        return {
            "estimate": self.estimate,
            "lambdas": list(self.lambdas),
            "c_lambda": list(self.c_lambda),
            "iterations": list(self.iterations),
            "loop_bound": self.loop_bound,
            "certificate": self.certificate,
            "c": self.c,
        }


def _loop_critical(f_line_V, g_line, om_line) -> float:
    """Smallest ``c >= max V`` with ``mean(sqrt(2 (c - V) g)) >= |mean(omega)|``."""
    vmax = float(f_line_V.max())
    target = abs(float(om_line.mean()))

    def excess(c):
        return float(np.mean(np.sqrt(2.0 * np.maximum(c - f_line_V, 0.0) * g_line))) - target

    if excess(vmax) >= 0.0:
        return vmax
    lo, hi = vmax, vmax + 1.0
    while excess(hi) < 0.0:
        hi = vmax + 2.0 * (hi - vmax)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
    return hi


def loop_certificates(sys: MagneticSystem) -> list[LoopCertificate]:
    """Lower bounds on ``c`` from every coordinate loop through the nodes."""
    grid = sys.grid
    out = []
    for axis in range(grid.dim):
        offsets = range(grid.n) if grid.dim == 2 else [0]
        for off in offsets:
            sl = line_index(grid, axis, off)
            C1, C2 = loop_integrals(sys.omega, sys.metric, axis, off)
            Vl = sys.V[sl]
            bound = C1 * C1 / (4.0 * C2) + float(Vl.mean())
            lc = _loop_critical(Vl, sys.metric.g[sl][..., axis, axis], sys.omega.components[sl][..., axis])
            out.append(LoopCertificate(axis, off, C1, C2, float(Vl.mean()), bound, lc))
    return out


def _controls(sys: MagneticSystem, n_dirs: int, n_radii: int):
    V = sys.V
    h0 = sys.hamiltonian_nodes(np.zeros(sys.grid.shape + (sys.grid.dim,)))
    # |H_p| = |p + omega|_{g*} <= sqrt(2 (c - min V)) and c <= max_x H(x, 0);
    # convert to a coordinate speed with the largest metric eigenvalue of g^{-1}
    lam_max = float(np.max(np.linalg.eigvalsh(sys.metric.inverse)))
    vmax = np.sqrt(2.0 * max(float(h0.max() - V.min()), 1e-12) * lam_max)
    radii = vmax * np.arange(1, n_radii + 1) / n_radii
    if sys.grid.dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        ang = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    vel = [np.zeros(sys.grid.dim)]
    for d in dirs:
        for r in radii:
            vel.append(r * d)
    return np.array(vel), vmax


def _shift_stencil(grid: PeriodicGrid, disp):
    """Interpolation of ``u(x + disp)`` as a list of (integer shift, weight)."""
    t = np.asarray(disp, dtype=float) / grid.h
    base = np.floor(t).astype(int)
    w = t - base
    out = []
    for corner in np.ndindex(*(2,) * grid.dim):
        wt = 1.0
        shift = []
        for a, c in enumerate(corner):
            wt *= w[a] if c else 1.0 - w[a]
            shift.append(int(base[a] + c))
        if wt > 1e-15:
            out.append((tuple(shift), wt))
    return out


def _apply_stencil(u, stencil):
    acc = np.zeros_like(u)
    axes = tuple(range(u.ndim))
    for shift, wt in stencil:
        acc += wt * np.roll(u, tuple(-s for s in shift), axis=axes)
    return acc


def _stencil_matrix(grid: PeriodicGrid, policy, stencils):
    """Sparse ``P`` with ``(P u)[x] = u(x - dt v_policy(x))`` by interpolation."""
    N = grid.size
    idx = np.arange(N).reshape(grid.shape)
    coords = np.stack(np.unravel_index(np.arange(N), grid.shape), axis=1)
    rows, cols, vals = [], [], []
    pol = policy.ravel()
    for a in np.unique(pol):
        sel = np.nonzero(pol == a)[0]
        for shift, wt in stencils[a]:
            target = (coords[sel] + np.array(shift)) % grid.n
            rows.append(sel)
            cols.append(np.ravel_multi_index(tuple(target.T), grid.shape))
            vals.append(np.full(sel.size, wt))
    del idx
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )


def discounted_solution(sys: MagneticSystem, lam: float, n_dirs=16, n_radii=8, dt=None,
                        max_iter=200, tol=1e-11):
    """Solve ``lam u + H(x, Du) = 0`` with a semi-Lagrangian scheme.

    The fixed point ``u = min_v {dt L(x, v) + (1 - lam dt) u(x - dt v)}`` is
    found by policy iteration (exact policy evaluation by a sparse solve),
    which reaches the same fixed point as value iteration in far fewer
    steps.  Returns ``(u, iterations, residual_history)``.
    """
    grid = sys.grid
    vel, vmax = _controls(sys, n_dirs, n_radii)
    if dt is None:
        dt = 2.0 * grid.h / vmax
    beta = 1.0 - lam * dt
    if not 0.0 < beta < 1.0:
        raise SolverError(f"discount {lam} incompatible with dt={dt}")
    pts = grid.coords()
    costs = np.stack([dt * sys.lagrangian(pts, np.broadcast_to(v, pts.shape)) for v in vel])
    stencils = [_shift_stencil(grid, -dt * v) for v in vel]
    policy = np.argmin(costs, axis=0)
    N = grid.size
    eye = sp.identity(N, format="csr")
    history = []
    u = None
    for it in range(max_iter):
        P = _stencil_matrix(grid, policy, stencils)
        rhs = np.take_along_axis(costs, policy[None], 0)[0].ravel()
        u = spla.spsolve((eye - beta * P).tocsc(), rhs).reshape(grid.shape)
        q = np.stack([costs[a] + beta * _apply_stencil(u, stencils[a]) for a in range(len(vel))])
        best = np.argmin(q, axis=0)
        qbest = np.take_along_axis(q, best[None], 0)[0]
        res = float(np.max(np.abs(u - qbest)))
        history.append(res)
        cur = np.take_along_axis(q, policy[None], 0)[0]
        improve = qbest < cur - tol * (1.0 + np.abs(cur))
        if not improve.any():
            return u, it + 1, history
        policy = np.where(improve, best, policy)
    raise SolverError(f"policy iteration did not converge for lambda={lam}", history)


def estimate_critical_value(sys: MagneticSystem, lambdas=(0.2, 0.1), tol=0.02, n_dirs=16,
                            n_radii=8, max_iter=200, snap=True) -> CriticalValueResult:
    """Vanishing-discount estimate of the critical value with loop certificates.

    ``estimate`` is the linear extrapolation to ``lambda = 0`` of
    ``c_lambda = -lambda * mean(u_lambda)`` from the last two rungs.
    ``certificate`` is the largest lower bound from coordinate loops and
    ``max V``; ``c`` is the certificate when it lies within ``tol`` of the
    estimate (and ``snap``), otherwise the estimate.
    """
    lambdas = [float(x) for x in lambdas]
    if len(lambdas) < 2:
        raise ValueError("need at least two discount rungs")
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])) or min(lambdas) < 1e-4:
        raise ValueError("discount ladder must be strictly decreasing and >= 1e-4")
    cl, its = [], []
    for lam in lambdas:
        u, it, _ = discounted_solution(sys, lam, n_dirs, n_radii, max_iter=max_iter)
        cl.append(-lam * float(u.mean()))
        its.append(it)
    l1, l2 = lambdas[-2], lambdas[-1]
    c1, c2 = cl[-2], cl[-1]
    est = (l1 * c2 - l2 * c1) / (l1 - l2)
    loops = loop_certificates(sys)
    bound = max(lc.bound for lc in loops)
    cert = max(0.0, max(lc.loop_critical for lc in loops))
    if est < bound - tol:
        raise SolverError(
            f"critical value estimate {est:.6g} violates the loop lower bound {bound:.6g}"
        )
    if est < -tol:
        raise SolverError(f"critical value estimate {est:.6g} is negative beyond tolerance")
    c = cert if (snap and abs(est - cert) <= tol) else est
    log.info("critical value: estimate %.6g certificate %.6g -> %.6g", est, cert, c)
    return CriticalValueResult(est, lambdas, cl, its, bound, cert, c, loops)


# ---------------------------------------------------------------------------
# weak KAM solution
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WeakKamField:
    grid: PeriodicGrid
    u: np.ndarray
    c: float
    residual_max: float
    residual_l2: float
    iterations: int
    method: str
    anchors: tuple
    active: np.ndarray
    excluded: int = 0

    def at(self, x):
        return periodic_interp(self.grid, self.u, x)

    def to_dict(self):
        return {
            "c": self.c,
            "residual_max": self.residual_max,
            "residual_l2": self.residual_l2,
            "iterations": self.iterations,
            "method": self.method,
            "anchors": [list(a) for a in self.anchors],
            "excluded_nodes": self.excluded,
        }


def one_sided_gradients(grid: PeriodicGrid, u: np.ndarray):
    """Second-order forward and backward differences, each ``shape + (dim,)``."""
    fw, bw = [], []
    h = grid.h
    for a in range(grid.dim):
        u1, u2 = np.roll(u, -1, a), np.roll(u, -2, a)
        m1, m2 = np.roll(u, 1, a), np.roll(u, 2, a)
        fw.append((-3.0 * u + 4.0 * u1 - u2) / (2.0 * h))
        bw.append((3.0 * u - 4.0 * m1 + m2) / (2.0 * h))
    return np.stack(fw, -1), np.stack(bw, -1)


def central_gradient(grid: PeriodicGrid, u: np.ndarray) -> np.ndarray:
    h = grid.h
    return np.stack(
        [(np.roll(u, -1, a) - np.roll(u, 1, a)) / (2.0 * h) for a in range(grid.dim)], -1
    )


def differentiable_mask(grid: PeriodicGrid, u: np.ndarray, factor: float = 5.0) -> np.ndarray:
    """Nodes whose one-sided gradients agree within ``factor * h`` on every axis."""
    fw, bw = one_sided_gradients(grid, u)
    return np.all(np.abs(fw - bw) <= factor * grid.h, axis=-1)


def hj_residual(sys: MagneticSystem, u: np.ndarray, c: float, active=None):
    """Max and RMS of ``|H(x, Du) - c|`` over differentiable active nodes."""
    grid = sys.grid
    mask = differentiable_mask(grid, u)
    if active is not None:
        mask &= active
    if not mask.any():
        return float("nan"), float("nan")
    r = np.abs(sys.hamiltonian_nodes(central_gradient(grid, u)) - c)[mask]
    return float(r.max()), float(np.sqrt(np.mean(r * r)))


def default_anchor(sys: MagneticSystem, c: float, tol: float = 1e-9):
    """A node of the projected Aubry set used as the zero level of ``u``.

    If a coordinate loop is critical above ``max V`` the anchor is a node on
    the loop; otherwise it is the first maximizer of ``V`` among the nodes
    with ``c >= V`` (all of ``argmax V`` when ``c >= 0``).
    """
    loops = loop_certificates(sys)
    best = max(loops, key=lambda lc: lc.loop_critical)
    if best.loop_critical > tol and abs(best.loop_critical - c) <= max(tol, 1e-6 * abs(c)):
        idx = [best.offset] * sys.grid.dim
        idx[best.axis] = 0
        return tuple(idx)
    V = np.where(c - sys.V >= -EPS_F, sys.V, -np.inf)
    return tuple(int(i) for i in np.unravel_index(int(np.argmax(V)), sys.grid.shape))


def _kernel_inputs(sys: MagneticSystem, c: float):
    f = c - sys.V
    active = f >= -EPS_F
    s = np.sqrt(2.0 * np.maximum(f, 0.0))
    if sys.grid.dim == 1:
        g = np.ascontiguousarray(sys.metric.g[..., 0, 0])
        om = np.ascontiguousarray(sys.omega.components[..., 0])
    else:
        g = np.ascontiguousarray(sys.metric.g)
        om = np.ascontiguousarray(sys.omega.components)
    return s, g, om, active


def solve_critical(sys: MagneticSystem, c: float, anchors=None, tol=1e-12,
                   max_sweeps=5000) -> WeakKamField:
    """Weak KAM solution ``u`` of ``H(x, Du) = c`` with ``u = 0`` on the anchors.

    Nodes with ``c - V < 0`` are excluded (and counted); the sweep raises
    :class:`SolverError` if it fails to settle within ``max_sweeps``.
    """
    grid = sys.grid
    if anchors is None:
        anchors = [default_anchor(sys, c)]
    anchors = tuple(tuple(int(i) % grid.n for i in np.atleast_1d(a)) for a in anchors)
    s, g, om, active = _kernel_inputs(sys, c)
    if not active.any():
        raise SolverError("admissible region {c >= V} is empty")
    u = np.full(grid.shape, np.inf)
    fixed = np.zeros(grid.shape, bool)
    for a in anchors:
        u[a] = 0.0
        fixed[a] = True
    sweep = _kernels.sweep_1d if grid.dim == 1 else _kernels.sweep_2d
    it = sweep(u, fixed, active, s, g, om, grid.h, tol, max_sweeps)
    if it < 0:
        raise SolverError(f"sweeping did not settle in {max_sweeps} sweeps (non-monotone update?)")
    excluded = int((~active).sum())
    if excluded:
        log.warning("solve_critical: %d node(s) with c - V < 0 excluded", excluded)
    u = np.where(active, u, np.nan)
    if not np.all(np.isfinite(u[active])):
        raise SolverError("some admissible nodes are unreachable from the anchors")
    rmax, rl2 = hj_residual(sys, np.nan_to_num(u), c, active)
    u.setflags(write=False)
    active.setflags(write=False)
    return WeakKamField(grid, u, float(c), rmax, rl2, int(it), "sweep-upwind", anchors, active, excluded)


def eikonal_distance(metric: MetricField, sources, init_radius: float = 4.0) -> np.ndarray:
    """Riemannian distance to a node set by fast marching on the periodic grid.

    Nodes within ``init_radius * h`` of a source are initialized with the
    distance in the frozen source metric, which removes the point-source
    error of the first-order update.
    """
    grid = metric.grid
    src = [tuple(int(i) % grid.n for i in np.atleast_1d(a)) for a in sources]
    if not src:
        raise ValueError("empty source set")
    u = np.full(grid.shape, np.inf)
    acc = np.zeros(grid.shape, bool)
    pts = grid.coords()
    for a in src:
        d = grid.displacement(grid.node_coord(a), pts)
        ga = metric.g[a]
        dist = np.sqrt(np.einsum("...i,ij,...j->...", d, ga, d))
        near = np.linalg.norm(d, axis=-1) <= init_radius * grid.h + 1e-12
        u = np.where(near, np.minimum(u, dist), u)
        acc |= near
    active = np.ones(grid.shape, bool)
    s = np.ones(grid.shape)
    if grid.dim == 1:
        _kernels.march_1d(u, acc, active, s, np.ascontiguousarray(metric.g[..., 0, 0]), grid.h)
    else:
        _kernels.march_2d(u, acc, active, s, np.ascontiguousarray(metric.g), grid.h)
    return u


def eikonal_field(sys: MagneticSystem, sources, exclude: float = 8.0) -> WeakKamField:
    """Distance function packaged as a solution at level ``c = 1/2`` (``omega = 0``, ``V = 0``).

    The equation holds off the source set only, so nodes within
    ``exclude * h`` of a source are left out of the active region.
    """
    u = eikonal_distance(sys.metric, sources)
    active = u > exclude * sys.grid.h
    rmax, rl2 = hj_residual(sys, u, 0.5, active)
    u.setflags(write=False)
    active.setflags(write=False)
    anchors = tuple(tuple(int(i) for i in np.atleast_1d(a)) for a in sources)
    return WeakKamField(sys.grid, u, 0.5, rmax, rl2, 1, "fast-marching", anchors, active, 0)
