"""Smooth approximations ``u^m = eta_m * u`` and checks along their gradient flows.

The kernel is the standard bump ``exp(-1 / (1 - |y|^2 m^2))`` supported in
``B(0, 1/m)`` and normalized to unit discrete mass.  ``u`` is first
interpolated (periodic cubic spline by default) onto a finer grid so the kernel spans at least
``min_cells`` fine cells, convolved periodically by FFT, and the gradient
and Hessian of the (smooth) result are taken spectrally.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .flow import COMPLETED, LEFT_W, Trajectory
from .geometry import (
    EPS_F,
    PeriodicGrid,
    christoffel_field,
    conformal_rescale,
    periodic_diff,
    periodic_interp,
)
from .hj_solver import MagneticSystem, WeakKamField, central_gradient, differentiable_mask

log = logging.getLogger(__name__)

DEFAULT_LADDER = (16, 32, 64, 128)


class MollifyError(ValueError):
    pass


def check_resolution(grid: PeriodicGrid, m: int, min_width: float = 2.0) -> None:
    """Reject kernels narrower than ``min_width`` grid cells."""
    if 1.0 / m < min_width * grid.h - 1e-15:
        raise MollifyError(
            f"kernel under-resolved: 1/m = {1.0 / m:.4g} < {min_width:g}h = {min_width * grid.h:.4g}"
        )


def bump_kernel(fine: PeriodicGrid, m: int):
    """Bump of radius ``1/m`` on the fine periodic grid, centred at node 0, unit discrete mass.

    Returns ``(eta, mass)`` where ``mass`` is the raw discrete sum.
    """
    eps = 1.0 / m
    y = fine.coords()
    y = y - np.rint(y)
    q = np.sum(y * y, -1) / eps**2
    inside = q < 1.0
    phi = np.where(inside, np.exp(-1.0 / np.where(inside, 1.0 - q, 1.0)), 0.0)
    mass = float(phi.sum())
    return phi / mass, mass


def upsample(grid: PeriodicGrid, values: np.ndarray, factor: int, order: int = 3):
    """Periodic spline interpolation onto a grid ``factor`` times finer.

    ``order=1`` is multilinear; the default cubic spline keeps the second
    derivative of the interpolant continuous, which matters when the kernel
    spans only a few coarse cells.  Returns ``(fine_grid, fine_values)``.
    """
    values = np.asarray(values, float)
    if factor == 1:
        return grid, values
    fine = PeriodicGrid(grid.dim, grid.n * factor)
    if order == 1:
        return fine, periodic_interp(grid, values, fine.coords())
    coords = np.moveaxis(fine.coords() * grid.n, -1, 0)
    return fine, map_coordinates(values, coords, order=order, mode="grid-wrap")


def _wavenumbers(fine: PeriodicGrid):
    """``2 pi i k`` per axis for an ``rfftn`` layout, Nyquist mode zeroed."""
    n = fine.n
    out = []
    for a in range(fine.dim):
        k = np.fft.rfftfreq(n, 1.0 / n) if a == fine.dim - 1 else np.fft.fftfreq(n, 1.0 / n)
        k = np.where(np.abs(k) == n // 2, 0.0, k) if n % 2 == 0 else k
        shape = [1] * fine.dim
        shape[a] = -1
        out.append((2j * np.pi * k).reshape(shape))
    return out


@dataclass
class MollifiedField:
    """``u^m`` with gradient and Hessian sampled on a fine grid."""

    m: int
    grid: PeriodicGrid
    fine: PeriodicGrid
    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    source: WeakKamField = field(repr=False)

    @classmethod
    def build(cls, u: WeakKamField, m: int, min_cells: int = 8, min_width: float = 2.0,
              order: int = 3):
        grid = u.grid
        check_resolution(grid, m, min_width)
        factor = max(1, int(np.ceil(min_cells * m / grid.n)))
        vals = np.asarray(u.u, float)
        if not np.all(np.isfinite(vals)):
            # excluded nodes carry no value; fill with the nearest admissible level
            vals = np.where(np.isfinite(vals), vals, np.nanmax(vals))
        fine, uf = upsample(grid, vals, factor, order)
        eta, _ = bump_kernel(fine, m)
        shape = fine.shape
        axes = tuple(range(fine.dim))
        vhat = np.fft.rfftn(uf) * np.fft.rfftn(eta)
        value = np.fft.irfftn(vhat, s=shape, axes=axes)
        d = fine.dim
        ik = _wavenumbers(fine)
        grad = np.stack([np.fft.irfftn(vhat * ik[a], s=shape, axes=axes) for a in range(d)], -1)
        hess = np.empty(shape + (d, d))
        for a in range(d):
            for b in range(a, d):
                hess[..., a, b] = np.fft.irfftn(vhat * ik[a] * ik[b], s=shape, axes=axes)
                hess[..., b, a] = hess[..., a, b]
        return cls(m, grid, fine, value, grad, hess, u)

    @property
    def width(self) -> float:
        return 1.0 / self.m

    def value_at(self, x):
        return periodic_interp(self.fine, self.value, x)

    def grad_at(self, x):
        return periodic_interp(self.fine, self.grad, x)

    def hess_at(self, x):
        return periodic_interp(self.fine, self.hess, x)

    def on_coarse(self, arr):
        """Restrict a fine-grid field to the coarse nodes."""
        k = self.fine.n // self.grid.n
        sl = (slice(None, None, k),) * self.grid.dim
        return arr[sl]


@dataclass
class MollifiedFamily:
    fields: dict
    skipped: dict

    @classmethod
    def build(cls, u: WeakKamField, ladder=DEFAULT_LADDER, **kw):
        fields, skipped = {}, {}
        for m in ladder:
            try:
                fields[int(m)] = MollifiedField.build(u, int(m), **kw)
            except MollifyError as exc:
                skipped[int(m)] = str(exc)
                log.warning("m=%d skipped: %s", m, exc)
        return cls(fields, skipped)

    @property
    def ladder(self):
        return sorted(self.fields)


def mollify(u: WeakKamField, m: int, **kw) -> MollifiedField:
    return MollifiedField.build(u, m, **kw)


# ---------------------------------------------------------------------------
# smooth flows and the energy defect
# ---------------------------------------------------------------------------


def _smooth_velocity(mf: MollifiedField, sys: MagneticSystem, c: float, x, mode):
    xx = np.asarray(x, float).reshape(1, -1)
    ginv = periodic_interp(sys.grid, sys.metric.inverse, xx)[0]
    om = periodic_interp(sys.grid, sys.omega.components, xx)[0]
    v = ginv @ (mf.grad_at(xx)[0] + om)
    if mode == "g2":
        v = v / (c - float(periodic_interp(sys.grid, sys.V, xx)[0]))
    return v


def smooth_flow(mf: MollifiedField, sys: MagneticSystem, c: float, x0, T: float, step: float,
                mode: str = "g1", eps_f: float = EPS_F) -> Trajectory:
    """Heun integration of ``x' = (Du^m + omega)^sharp`` (``g1``) or its ``1/f`` rescaling (``g2``).

    For ``omega = 0`` the ``g1`` field is the Riemannian gradient of
    ``u^m``; the ``g2`` field is the gradient for the rescaled metric plus
    the dual of ``omega`` in that metric.
    """
    if mode not in ("g1", "g2"):
        raise ValueError(f"unknown smooth-flow mode {mode!r}")
    x = np.asarray(x0, float).reshape(sys.grid.dim).copy()
    nsteps = int(np.ceil(T / step - 1e-9))
    dt = T / nsteps

    def gap(y):
        return c - float(periodic_interp(sys.grid, sys.V, y.reshape(1, -1))[0])

    times, pts = [0.0], [x.copy()]
    status = COMPLETED
    if gap(x) <= eps_f:
        status = LEFT_W
    else:
        for k in range(nsteps):
            k1 = _smooth_velocity(mf, sys, c, x, mode)
            xp = x + dt * k1
            if gap(xp) <= eps_f:
                status = LEFT_W
                break
            k2 = _smooth_velocity(mf, sys, c, xp, mode)
            xn = x + 0.5 * dt * (k1 + k2)
            if gap(xn) <= eps_f:
                status = LEFT_W
                break
            x = xn
            times.append((k + 1) * dt)
            pts.append(x.copy())
    pts = np.array(pts)
    g = mf.grad_at(pts)
    nan = np.full(len(pts), np.nan)
    return Trajectory(np.array(times), pts, g, nan, nan, status, f"smooth-{mode}-m{mf.m}")


def psi_values(mf: MollifiedField, sys: MagneticSystem, c: float, points, mode: str):
    """Energy defect along ``points``.

    ``riemannian``: ``|Du^m|^2_{g*} - 1``; ``magnetic``:
    ``1/2 |Du^m + omega|^2_{g~*} - 1`` with ``g~ = (c - V) g``.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    ginv = periodic_interp(sys.grid, sys.metric.inverse, pts)
    du = mf.grad_at(pts)
    if mode == "riemannian":
        return np.einsum("ki,kij,kj->k", du, ginv, du) - 1.0
    if mode == "magnetic":
        q = du + periodic_interp(sys.grid, sys.omega.components, pts)
        f = c - periodic_interp(sys.grid, sys.V, pts)
        return 0.5 * np.einsum("ki,kij,kj->k", q, ginv, q) / f - 1.0
    raise ValueError(f"unknown psi mode {mode!r}")


@dataclass
class PsiTrace:
    m: int
    times: np.ndarray
    psi: np.ndarray
    mode: str
    slack: float
    C: float
    fit_ok: bool

    @property
    def psi0(self) -> float:
        return float(self.psi[0])

    @property
    def psi_max(self) -> float:
        return float(np.max(self.psi))

    def bound(self) -> np.ndarray:
        return np.exp(-self.C * self.times) * self.psi[0] + self.slack

    def to_dict(self):
        return {"m": self.m, "mode": self.mode, "slack": self.slack, "C": self.C,
                "fit_ok": self.fit_ok, "psi0": self.psi0, "psi_max": self.psi_max}


def fit_decay(times, psi, slack):
    """Smallest ``C`` with ``psi(t) <= exp(-C t) psi(0) + slack`` on the trace.

    Returns ``(C, ok)``.  For ``psi(0) >= 0`` the bound is checked with
    ``C = 0``.
    """
    times = np.asarray(times, float)
    psi = np.asarray(psi, float)
    p0 = psi[0]
    if p0 >= 0.0:
        return 0.0, bool(np.all(psi <= p0 + slack))
    rest = times > 0
    target = psi[rest] - slack
    if np.any(target >= 0.0):
        return float("inf"), False
    # exp(-C t) p0 >= target  <=>  C >= -log(target / p0) / t
    ratio = target / p0
    need = np.where(ratio >= 1.0, -np.inf, -np.log(np.clip(ratio, 1e-300, None)) / times[rest])
    C = float(np.max(need)) if need.size else 0.0
    return (C if np.isfinite(C) else 0.0), True


def psi_track(mf: MollifiedField, traj: Trajectory, sys: MagneticSystem, c: float,
              mode: str = "riemannian", slack: float = 0.1) -> PsiTrace:
    psi = psi_values(mf, sys, c, traj.points, mode)
    C, ok = fit_decay(traj.times, psi, slack)
    return PsiTrace(mf.m, traj.times.copy(), psi, mode, slack, C, ok)


# ---------------------------------------------------------------------------
# Hessian identities
# ---------------------------------------------------------------------------


def twice_differentiable_mask(u: WeakKamField, tol_factor: float = 10.0) -> np.ndarray:
    """Nodes whose second differences are stable under a one-node stencil shift.

    Every second difference ``D_aa u`` at the node must agree with those at
    the two axis neighbours within ``tol_factor * h``; the node must also
    pass the first-order differentiability test.
    """
    grid = u.grid
    h = grid.h
    vals = np.nan_to_num(np.asarray(u.u, float))
    ok = differentiable_mask(grid, vals) & np.asarray(u.active)
    for a in range(grid.dim):
        d2 = (np.roll(vals, -1, a) - 2.0 * vals + np.roll(vals, 1, a)) / h**2
        for s in (-1, 1):
            ok &= np.abs(np.roll(d2, s, a) - d2) <= tol_factor * h
    return ok


def _erode(mask: np.ndarray, grid: PeriodicGrid, radius: float) -> np.ndarray:
    from scipy.ndimage import minimum_filter

    k = int(np.ceil(radius / grid.h))
    if k <= 0:
        return mask
    rng = np.arange(-k, k + 1)
    offs = np.stack(np.meshgrid(*([rng] * grid.dim), indexing="ij"), -1)
    foot = np.linalg.norm(offs, axis=-1) <= k
    return minimum_filter(mask.astype(np.uint8), footprint=foot, mode="wrap").astype(bool)


def _fd_derivatives(u: WeakKamField):
    """Compact second-order gradient and Hessian (one-node reach, diagonals for mixed terms)."""
    grid = u.grid
    h = grid.h
    vals = np.nan_to_num(np.asarray(u.u, float))
    d = grid.dim
    grad = central_gradient(grid, vals)
    hess = np.empty(grid.shape + (d, d))
    for a in range(d):
        hess[..., a, a] = (np.roll(vals, -1, a) - 2.0 * vals + np.roll(vals, 1, a)) / h**2
        for b in range(a + 1, d):
            pp = np.roll(vals, (-1, -1), (a, b))
            mm = np.roll(vals, (1, 1), (a, b))
            pm = np.roll(vals, (-1, 1), (a, b))
            mp = np.roll(vals, (1, -1), (a, b))
            hess[..., a, b] = hess[..., b, a] = (pp + mm - pm - mp) / (4.0 * h * h)
    return grad, hess


@dataclass
class HessianReport:
    mode: str
    samples: int
    requested: int
    defect_max: float
    defect_mean: float
    K_fit: float
    warning: str = ""
    points: np.ndarray = field(default=None, repr=False)
    defects: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {"mode": self.mode, "N": self.samples, "requested": self.requested,
                "defect_max": self.defect_max, "defect_mean": self.defect_mean,
                "K_fit": self.K_fit, "warning": self.warning}


def hessian_checks(source, sys: MagneticSystem, c: float, mode: str = "riemannian", N: int = 500,
                   seed: int = 0, region=None, n_xi: int = 8, margin: float = 4.0) -> HessianReport:
    """Sampled Hessian identity and upper bound.

    ``source`` is a :class:`WeakKamField` (finite differences) or a
    :class:`MollifiedField`.  Sample nodes are drawn from the numerically
    twice-differentiable nodes of the underlying solution, shrunk by the
    kernel width plus ``margin * h`` for mollified sources (the cubic
    upsampling spreads a kink over a few nodes), and intersected with
    ``region`` when given.

    ``riemannian`` mode: defect ``Hess u(xi, grad u)`` for ``g``-unit ``xi``
    and ``K = max Hess u(xi, xi) / (|xi|^2 - <xi, grad u>^2)``.

    ``magnetic`` mode, with ``g~ = (c - V) g``, ``v~ = (Du + omega)^sharp~``:
    defect ``(Hess~ u + nabla~ X~)(xi, v~)`` for ``g~``-unit ``xi`` and
    ``kappa = max (Hess~ u + nabla~ X~)(xi, xi) / (|xi|~^2 - 1/2 <xi, v~>~^2)``.
    """
    grid = sys.grid
    h = grid.h
    if isinstance(source, MollifiedField):
        base = source.source
        mask = _erode(twice_differentiable_mask(base), grid, source.width + margin * h)
        grad = source.on_coarse(source.grad)
        hess = source.on_coarse(source.hess)
    else:
        base = source
        mask = twice_differentiable_mask(base)
        grad, hess = _fd_derivatives(base)
    if region is not None:
        mask = mask & np.asarray(region, bool)
    if mode == "magnetic":
        f = c - sys.V
        mask = mask & (f > EPS_F)
    nodes = np.argwhere(mask)
    rng = np.random.default_rng(seed)
    warning = ""
    if len(nodes) < N // 2:
        warning = f"only {len(nodes)} usable sample nodes (< N/2 = {N // 2})"
        log.warning("hessian_checks: %s", warning)
    if len(nodes) == 0:
        return HessianReport(mode, 0, N, float("nan"), float("nan"), float("nan"), warning)
    pick = nodes[rng.choice(len(nodes), size=min(N, len(nodes)), replace=False)]
    ix = tuple(pick.T)
    du, d2u = grad[ix], hess[ix]
    d = grid.dim
    if mode == "riemannian":
        metric = sys.metric
        gam = christoffel_field(metric)[ix]
        ginv = metric.inverse[ix]
        gmat = metric.g[ix]
        T = d2u - np.einsum("kcij,kc->kij", gam, du)
        v = np.einsum("kij,kj->ki", ginv, du)
        half = 1.0
    elif mode == "magnetic":
        f = c - sys.V
        tilde = conformal_rescale(sys.metric, f, region=f > EPS_F)
        gam = christoffel_field(tilde)[ix]
        ginv = tilde.inverse[ix]
        gmat = tilde.g[ix]
        om = sys.omega.components
        dom = np.stack([periodic_diff(om, a, h) for a in range(d)], -2)[ix]  # [k, i, j] = d_i om_j
        q = du + om[ix]
        T = d2u + dom - np.einsum("kcij,kc->kij", gam, q)
        v = np.einsum("kij,kj->ki", ginv, q)
        half = 0.5
    else:
        raise ValueError(f"unknown mode {mode!r}")
    xi = rng.standard_normal((len(pick), n_xi, d))
    nrm = np.sqrt(np.einsum("kni,kij,knj->kn", xi, gmat, xi))
    xi = xi / nrm[..., None]
    defects = np.abs(np.einsum("kni,kij,kj->kn", xi, T, v))
    quad = np.einsum("kni,kij,knj->kn", xi, T, xi)
    proj = np.einsum("kni,kij,kj->kn", xi, gmat, v)
    denom = 1.0 - half * proj**2
    good = denom > 1e-3
    K = float(np.max(quad[good] / denom[good])) if np.any(good) else float("nan")
    per_point = defects.max(axis=1)
    return HessianReport(mode, len(pick), N, float(per_point.max()), float(per_point.mean()), K,
                         warning, pick * h, per_point)


def gradient_bound_check(mf: MollifiedField, sys: MagneticSystem) -> tuple[float, float]:
    """``(max |Du^m|_{g*}, essential max |Du|_{g*})`` over the coarse nodes."""
    u = mf.source
    grid = u.grid
    vals = np.nan_to_num(np.asarray(u.u, float))
    mask = differentiable_mask(grid, vals) & np.asarray(u.active)
    g0 = central_gradient(grid, vals)
    ginv = sys.metric.inverse
    n0 = np.sqrt(np.einsum("...i,...ij,...j->...", g0, ginv, g0))[mask]
    gm = mf.on_coarse(mf.grad)
    nm = np.sqrt(np.einsum("...i,...ij,...j->...", gm, ginv, gm))
    return float(nm.max()), float(n0.max())


__all__ = [
    "MollifiedField", "MollifiedFamily", "PsiTrace", "HessianReport", "mollify",
    "smooth_flow", "psi_track", "psi_values", "fit_decay", "hessian_checks",
    "twice_differentiable_mask", "bump_kernel", "check_resolution", "MollifyError",
]
