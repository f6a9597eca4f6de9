"""Generalized gradient flows driven by the minimal-energy momentum selection.

``integrate`` advances ``x' = H_p(x, p_sharp(x))`` (``mode="g1"``) or the
same field divided by the energy gap ``f = c - V`` (``mode="g2"``) with an
explicit Heun step in which ``p_sharp`` is frozen; only the metric and the
1-form are re-evaluated at the predictor point.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .geometry import EPS_F, periodic_interp
from .hj_solver import MagneticSystem, WeakKamField
from .subdiff import GradientData, SubdiffError, default_delta, default_theta, gradient_fan

COMPLETED, LEFT_W, STALLED = "Completed", "LeftW", "Stalled"
PASS, FAIL, NOT_APPLICABLE = "Pass", "Fail", "NotApplicable"


class FlowError(RuntimeError):
    pass


@dataclass
class Trajectory:
    """Flow samples; ``points`` are unwrapped (continuous lift of the curve)."""

    times: np.ndarray
    points: np.ndarray
    p_sharp: np.ndarray
    indicator: np.ndarray
    energy: np.ndarray
    status: str
    mode: str = "g1"
    message: str = ""

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def write_csv(self, path):
        path = Path(path)
        dim = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + ["x", "y"][:dim] + ["indicator", "p_sharp_norm"])
            for t, x, ind, p in zip(self.times, self.points, self.indicator, self.p_sharp):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x]
                           + [repr(float(ind)), repr(float(np.linalg.norm(p)))])
        return path


@dataclass
class EnergyGapField:
    f: np.ndarray
    mask: np.ndarray
    eps_f: float = EPS_F

    @classmethod
    def from_system(cls, sys: MagneticSystem, c: float, eps_f: float = EPS_F):
        f = c - sys.V
        return cls(f, f > eps_f, eps_f)

    def at(self, grid, x):
        return periodic_interp(grid, self.f, np.asarray(x, float))


def _fields(sys, x, interp):
    x = np.asarray(x, float).reshape(1, -1)
    if interp == "nearest":
        idx = sys.grid.nearest_node(x[0])
        return sys.metric.inverse[idx], sys.omega.components[idx], float(sys.V[idx])
    ginv = periodic_interp(sys.grid, sys.metric.inverse, x)[0]
    om = periodic_interp(sys.grid, sys.omega.components, x)[0]
    V = float(periodic_interp(sys.grid, sys.V, x)[0])
    return ginv, om, V


def _inside(sys, u: WeakKamField, x, c, eps_f):
    _, _, V = _fields(sys, x, "linear")
    if c - V <= eps_f:
        return False
    return bool(u.active[sys.grid.nearest_node(x)])


def integrate(u: WeakKamField, sys: MagneticSystem, c: float, x0, T: float, step: float,
              mode: str = "g1", radius=None, theta=None, interp: str = "linear",
              eps_f: float = EPS_F, data: GradientData | None = None) -> Trajectory:
    """Integrate the generalized gradient flow from ``x0`` over ``[0, T]``.

    The momentum ``p_sharp`` driving the curve comes from the plain adaptive
    gradient ball, so a point that drifts off a non-differentiable band sees
    only its own side and is pushed back in.  The recorded indicator uses
    the widened ball (see :meth:`GradientData.ball`), which tolerates that
    O(h) wobble at the band edge.
    """
    if mode not in ("g1", "g2"):
        raise ValueError(f"unknown flow mode {mode!r}")
    grid = sys.grid
    data = data if data is not None else GradientData(u)
    x = np.asarray(x0, float).reshape(grid.dim).copy()
    if not _inside(sys, u, x, c, eps_f):
        return Trajectory(np.array([0.0]), x[None], np.full((1, grid.dim), np.nan),
                          np.array([np.nan]), np.array([np.nan]), LEFT_W, mode,
                          "start outside the admissible region")
    nsteps = int(np.ceil(T / step - 1e-9))
    dt = T / nsteps
    times, pts, ps, inds, ens = [], [], [], [], []
    status, message = COMPLETED, ""

    def velocity(y, p):
        ginv, om, V = _fields(sys, y, interp)
        v = ginv @ (p + om)
        if mode == "g2":
            v = v / (c - V)
        return v

    for k in range(nsteps + 1):
        try:
            fan = gradient_fan(u, sys, c, grid.wrap(x), radius, theta, data)
            wide = gradient_fan(u, sys, c, grid.wrap(x), radius, theta, data, widen=True)
        except SubdiffError as exc:
            status, message = STALLED, f"t={k * dt:.6g}: {exc}"
            break
        times.append(k * dt)
        pts.append(x.copy())
        ps.append(fan.p_sharp)
        inds.append(wide.indicator)
        ens.append(c - fan.indicator)
        if k == nsteps:
            break
        p = fan.p_sharp
        k1 = velocity(x, p)
        xp = x + dt * k1
        if not _inside(sys, u, xp, c, eps_f):
            status, message = LEFT_W, f"left the admissible region at t={(k + 1) * dt:.6g}"
            break
        k2 = velocity(xp, p)
        xn = x + 0.5 * dt * (k1 + k2)
        if not _inside(sys, u, xn, c, eps_f):
            status, message = LEFT_W, f"left the admissible region at t={(k + 1) * dt:.6g}"
            break
        x = xn
    return Trajectory(np.array(times), np.array(pts), np.array(ps), np.array(inds),
                      np.array(ens), status, mode, message)


def integrate_g1(u, sys, c, x0, T, step, **kw) -> Trajectory:
    return integrate(u, sys, c, x0, T, step, mode="g1", **kw)


def integrate_g2(u, sys, c, x0, T, step, **kw) -> Trajectory:
    return integrate(u, sys, c, x0, T, step, mode="g2", **kw)


def rescaled_time(traj: Trajectory, sys: MagneticSystem, c: float) -> np.ndarray:
    """``s(t) = int_0^t f(gamma)`` by the trapezoid rule along a G1 trajectory."""
    f = c - periodic_interp(sys.grid, sys.V, traj.points)
    inc = 0.5 * (f[1:] + f[:-1]) * np.diff(traj.times)
    return np.concatenate([[0.0], np.cumsum(inc)])


def discrete_frechet(P, Q, period: float = 0.0) -> float:
    P = np.ascontiguousarray(np.atleast_2d(P), dtype=float)
    Q = np.ascontiguousarray(np.atleast_2d(Q), dtype=float)
    return float(_kernels.discrete_frechet(P, Q, float(period)))


def _resample(times, points, t):
    return np.stack([np.interp(t, times, points[:, a]) for a in range(points.shape[1])], -1)


@dataclass
class ReparamReport:
    max_pointwise: float
    frechet: float
    s_end: float
    t2_end: float
    monotone: bool

    def to_dict(self):
        return dict(self.__dict__)


def verify_reparam(traj1: Trajectory, traj2: Trajectory, sys: MagneticSystem, c: float,
                   eps_f: float = EPS_F) -> ReparamReport:
    """Compare a G1 curve, re-timed by ``s(t)``, with a G2 curve from the same start."""
    if traj1.status != traj2.status or traj1.status != COMPLETED:
        raise FlowError(f"status mismatch: {traj1.status} vs {traj2.status}")
    if np.linalg.norm(traj1.points[0] - traj2.points[0]) > 1e-12:
        raise FlowError("trajectories start at different points")
    s = rescaled_time(traj1, sys, c)
    f = c - periodic_interp(sys.grid, sys.V, traj1.points)
    ds = np.diff(s)
    monotone = bool(np.all(ds[f[:-1] > eps_f] > 0.0))
    if not monotone:
        raise FlowError("rescaled time is not strictly increasing")
    s_end = min(s[-1], traj2.times[-1])
    keep2 = traj2.times <= s_end + 1e-15
    t2 = traj2.times[keep2]
    q1 = _resample(s, traj1.points, t2)
    pointwise = float(np.max(np.linalg.norm(q1 - traj2.points[keep2], axis=1)))
    keep1 = s <= s_end + 1e-15
    P = traj1.points[keep1]
    Q = traj2.points[keep2]
    # close both polylines at the common end parameter
    P = np.vstack([P, _resample(s, traj1.points, np.array([s_end]))])
    Q = np.vstack([Q, _resample(traj2.times, traj2.points, np.array([s_end]))])
    fr = discrete_frechet(P, Q)
    return ReparamReport(pointwise, fr, float(s[-1]), float(traj2.times[-1]), monotone)


@dataclass
class InvarianceVerdict:
    verdict: str
    min_indicator: float
    start_indicator: float
    delta: float
    status: str

    @property
    def passed(self) -> bool:
        return self.verdict != FAIL

    def to_dict(self):
        return {**self.__dict__, "pass": self.passed}


def verify_invariance(traj: Trajectory, delta: float) -> InvarianceVerdict:
    """Minimum indicator along the curve; applicable only to singular starts."""
    if traj.status == LEFT_W and len(traj.times) == 1:
        return InvarianceVerdict(LEFT_W, float("nan"), float("nan"), delta, traj.status)
    start = float(traj.indicator[0])
    mn = float(np.nanmin(traj.indicator))
    if not start > delta:
        return InvarianceVerdict(NOT_APPLICABLE, mn, start, delta, traj.status)
    return InvarianceVerdict(PASS if mn >= 0.5 * delta else FAIL, mn, start, delta, traj.status)


def sup_distance(a: Trajectory, b: Trajectory) -> float:
    """Sup over the common time range of the distance between two curves."""
    t_end = min(a.times[-1], b.times[-1])
    t = np.union1d(a.times[a.times <= t_end], b.times[b.times <= t_end])
    return float(np.max(np.linalg.norm(
        _resample(a.times, a.points, t) - _resample(b.times, b.points, t), axis=1)))


@dataclass
class UniquenessReport:
    labels: list
    distances: np.ndarray
    max_distance: float
    bound: float
    passed: bool
    trajectories: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {
            "labels": self.labels,
            "distances": self.distances.tolist(),
            "max_distance": self.max_distance,
            "bound": self.bound,
            "pass": self.passed,
        }


def uniqueness_probe(u: WeakKamField, sys: MagneticSystem, c: float, x0, T: float, step: float,
                     radii=(2.0, 3.0, 4.0), interps=("linear", "nearest"),
                     ms=(16, 32, 64), C_u: float = 5.0) -> UniquenessReport:
    """Integrate G1 under several discretization choices and mollified drivers.

    Variants differ in the gradient-ball radius (in units of ``h``), the
    field interpolation, and smooth drivers ``u^m``; the probe passes when
    every pairwise sup-distance is at most ``C_u (1/min(m) + h + step)``.
    """
    from .mollify import MollifiedField, smooth_flow

    h = sys.grid.h
    data = GradientData(u)
    trajs = {}
    for r in radii:
        trajs[f"radius={r:g}h"] = integrate(u, sys, c, x0, T, step, radius=r * h, data=data)
    for ip in interps:
        key = f"interp={ip}"
        if key not in trajs:
            trajs[key] = integrate(u, sys, c, x0, T, step, interp=ip, data=data)
    for m in ms:
        mf = MollifiedField.build(u, m)
        trajs[f"m={m}"] = smooth_flow(mf, sys, c, x0, T, step, mode="g1")
    labels = list(trajs)
    D = np.zeros((len(labels), len(labels)))
    for i, j in itertools.combinations(range(len(labels)), 2):
        D[i, j] = D[j, i] = sup_distance(trajs[labels[i]], trajs[labels[j]])
    bound = C_u * (1.0 / min(ms) + h + step) if ms else C_u * (h + step)
    mx = float(D.max())
    return UniquenessReport(labels, D, mx, bound, mx <= bound, trajs)


__all__ = [
    "Trajectory", "EnergyGapField", "integrate", "integrate_g1", "integrate_g2",
    "verify_reparam", "verify_invariance", "uniqueness_probe", "discrete_frechet",
    "rescaled_time", "sup_distance", "default_delta", "default_theta",
]
