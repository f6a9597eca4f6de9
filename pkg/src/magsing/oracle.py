"""Closed-form and brute-force references, independent of the grid solvers.

The oracle systems are described by analytic callables (flat metric,
constant 1-form, smooth potential), so nothing here touches the Eikonal or
discounted schemes in :mod:`magsing.hj_solver`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# closed-form systems
# ---------------------------------------------------------------------------


def pendulum_solution(x):
    """Weak KAM solution of the pendulum ``V = cos(2 pi x) - 1`` with ``c = 0``.

    Returns ``(u, (du_left, du_right))``.  The solution is
    ``(2/pi)(1 - cos pi x)`` on ``[0, 1/2]`` and ``(2/pi)(1 + cos pi x)`` on
    ``[1/2, 1]``; the one-sided derivatives differ only at the kink ``x = 1/2``.

    Args:
        x: point or array of points on the circle (wrapped into ``[0, 1)``).
    """
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    left = x <= 0.5
    u = np.where(left, (2.0 / np.pi) * (1.0 - np.cos(np.pi * x)),
                 (2.0 / np.pi) * (1.0 + np.cos(np.pi * x)))
    slope = 2.0 * np.sin(np.pi * x)
    du_left = np.where(x <= 0.5, slope, -slope)
    du_right = np.where(x < 0.5, slope, -slope)
    du_left = np.where(x == 0.0, 0.0, du_left)
    if u.ndim == 0:
        return float(u), (float(du_left), float(du_right))
    return u, (du_left, du_right)


def pendulum_potential(x):
    return np.cos(TWO_PI * np.asarray(x, dtype=float)) - 1.0


def magnetic_critical(a: float):
    """Critical value ``a^2/2`` of ``omega = a dx`` on the circle, with its loop bound.

    The loop bound ``C1^2 / (4 C2)`` uses the unit-speed loop, for which
    ``C1 = a`` and ``C2 = 1/2``.  Returns ``(c, bound)``.
    """
    a = float(a)
    c = 0.5 * a * a
    C1, C2 = a, 0.5
    bound = C1 * C1 / (4.0 * C2)
    assert abs(bound - c) <= 1e-12 * max(1.0, c), "loop bound differs from a^2/2"
    return c, bound


def torus_distance(x, x0=(0.0, 0.0)):
    """Flat periodic distance ``min_k |x - x0 - k|``."""
    d = np.asarray(x, dtype=float) - np.asarray(x0, dtype=float)
    d = d - np.round(d)
    return np.linalg.norm(d, axis=-1)


@dataclass(frozen=True)
class TorusCutLocus:
    """The cut locus ``{x = x0 + 1/2} U {y = y0 + 1/2}`` of the torus distance."""

    x0: tuple = (0.0, 0.0)

    @property
    def lines(self) -> tuple:
        """Line positions ``(x-line, y-line)`` in ``[0, 1)``."""
        return tuple(float(np.mod(c + 0.5, 1.0)) for c in self.x0)

    def distance(self, p) -> np.ndarray:
        """Periodic distance from ``p`` to the nearest cut line."""
        p = np.asarray(p, dtype=float)
        lx, ly = self.lines
        dx = np.abs(p[..., 0] - lx)
        dy = np.abs(p[..., 1] - ly)
        dx = np.minimum(np.mod(dx, 1.0), 1.0 - np.mod(dx, 1.0))
        dy = np.minimum(np.mod(dy, 1.0), 1.0 - np.mod(dy, 1.0))
        return np.minimum(dx, dy)

    def contains(self, p, tol: float = 1e-12):
        d = self.distance(p)
        return bool(d <= tol) if np.ndim(d) == 0 else d <= tol

    def sample(self, n: int = 1024) -> np.ndarray:
        """Evenly spaced points along both lines."""
        t = (np.arange(n) + 0.5) / n
        lx, ly = self.lines
        return np.concatenate([np.stack([np.full(n, lx), t], -1),
                               np.stack([t, np.full(n, ly)], -1)])


def torus_cut_locus(x0=(0.0, 0.0)) -> TorusCutLocus:
    return TorusCutLocus(tuple(float(v) for v in x0))


def hausdorff_to_cut_locus(points: np.ndarray, locus: TorusCutLocus, n_sample: int = 4096) -> float:
    """Symmetric Hausdorff distance between a finite point set and the cut lines."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 0:
        return float("inf")
    forward = float(locus.distance(points).max())
    backward = 0.0
    for q in np.array_split(locus.sample(n_sample), 16):
        d = q[:, None, :] - points[None, :, :]
        d = d - np.round(d)
        backward = max(backward, float(np.linalg.norm(d, axis=-1).min(axis=1).max()))
    return max(forward, backward)


# ---------------------------------------------------------------------------
# oracle systems and brute-force action
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleSystem:
    """Analytic magnetic Lagrangian with flat metric and constant ``omega``.

    ``L(x, v) = 1/2 |v|^2 - omega . v - V(x)``.
    """

    name: str
    dim: int
    omega: tuple
    V: Callable
    grad_V: Callable
    c: float
    u: Callable

    def lagrangian(self, x, v):
        v = np.asarray(v, dtype=float)
        om = np.asarray(self.omega, dtype=float)
        return 0.5 * np.sum(v * v, -1) - v @ om - self.V(np.asarray(x, dtype=float))


def _zero(x):
    return np.zeros(np.shape(x)[:-1])


def pendulum_system() -> OracleSystem:
    return OracleSystem(
        "pendulum", 1, (0.0,),
        lambda x: pendulum_potential(x[..., 0]),
        lambda x: -TWO_PI * np.sin(TWO_PI * x),
        0.0,
        lambda x: pendulum_solution(np.asarray(x, dtype=float).reshape(-1)[0])[0],
    )


def magnetic_circle_system(a: float = 1.0) -> OracleSystem:
    c, _ = magnetic_critical(a)
    return OracleSystem("magnetic-1d", 1, (float(a),), _zero, np.zeros_like, c, lambda x: 0.0)


def torus_distance_system(x0=(0.0, 0.0)) -> OracleSystem:
    """``H = 1/2 |p|^2`` with ``c = 1/2``; the distance to ``x0`` is a weak KAM solution off ``x0``."""
    x0 = tuple(float(v) for v in x0)
    return OracleSystem("torus-distance", 2, (0.0, 0.0), _zero, np.zeros_like, 0.5,
                        lambda x: float(torus_distance(x, x0)))


def oracle_systems() -> list[OracleSystem]:
    return [pendulum_system(), magnetic_circle_system(1.0), torus_distance_system()]


def path_action(sys, nodes: np.ndarray, T: float, quad: int = 3) -> float:
    """Action of the piecewise-linear path through ``nodes`` (shape ``(K+1, dim)``) on ``[0, T]``.

    Each segment uses Gauss-Legendre quadrature with ``quad`` points for the
    potential term; the kinetic and magnetic terms are exact on segments.
    ``sys`` is an :class:`OracleSystem` or a grid-based system exposing
    ``lagrangian(x, v)``.
    """
    nodes = np.asarray(nodes, dtype=float)
    K = len(nodes) - 1
    dt = T / K
    d = np.diff(nodes, axis=0)
    v = d / dt
    s, w = np.polynomial.legendre.leggauss(quad)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    pts = nodes[:-1, None, :] + s[None, :, None] * d[:, None, :]
    vv = np.broadcast_to(v[:, None, :], pts.shape)
    L = sys.lagrangian(pts.reshape(-1, nodes.shape[1]), vv.reshape(-1, nodes.shape[1]))
    return float(dt * np.sum(L.reshape(K, quad) * w))


def _action_and_grad(z, sys: OracleSystem, x, y, K, T, quad):
    dim = sys.dim
    nodes = np.vstack([x, z.reshape(K - 1, dim), y])
    dt = T / K
    d = np.diff(nodes, axis=0)
    om = np.asarray(sys.omega, dtype=float)
    s, w = np.polynomial.legendre.leggauss(quad)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    pts = nodes[:-1, None, :] + s[None, :, None] * d[:, None, :]
    Vq = sys.V(pts.reshape(-1, dim)).reshape(K, quad)
    gV = sys.grad_V(pts.reshape(-1, dim)).reshape(K, quad, dim)
    act = np.sum(0.5 * np.sum(d * d, -1) / dt - d @ om) - dt * np.sum(Vq * w)
    # d/dnode of the kinetic term and of -dt * sum w V(node_k + s d_k)
    gnode = np.zeros_like(nodes)
    gnode[:-1] -= d / dt
    gnode[1:] += d / dt
    gnode[:-1] -= dt * np.einsum("q,kqi->ki", w * (1.0 - s), gV)
    gnode[1:] -= dt * np.einsum("q,kqi->ki", w * s, gV)
    return float(act), gnode[1:-1].ravel()


def brute_force_action(sys, x, y, T: float, resolution: int = 16, restarts: int = 50,
                       seed: int = 0, shifts: int = 1, quad: int = 3) -> float:
    """Smallest discretized action found over piecewise-linear lifted paths from ``x`` to ``y``.

    Interior nodes are optimized with L-BFGS from ``restarts`` random
    initializations (straight line plus noise) for every integer lift
    ``y + k`` with ``|k_i| <= shifts``.  The result is an upper bound on the
    infimum of the action over curves of duration ``T``.

    Args:
        sys: :class:`OracleSystem` (analytic gradient) or a grid system with
            ``lagrangian`` (finite-difference gradient).
        x, y: endpoints on the torus.
        T: duration.
        resolution: number of segments, at most 64.
    """
    if not 1 <= resolution <= 64:
        raise ValueError("resolution must be between 1 and 64 segments")
    if T <= 0:
        raise ValueError("T must be positive")
    dim = sys.dim if isinstance(sys, OracleSystem) else sys.grid.dim
    x = np.asarray(x, dtype=float).reshape(dim)
    y = np.asarray(y, dtype=float).reshape(dim)
    rng = np.random.default_rng(seed)
    K = resolution
    best = np.inf
    for k in itertools.product(range(-shifts, shifts + 1), repeat=dim):
        yk = y + np.asarray(k, dtype=float)
        line = x + np.linspace(0.0, 1.0, K + 1)[1:-1, None] * (yk - x)
        if K == 1:
            best = min(best, path_action(sys, np.vstack([x, yk]), T, quad))
            continue
        for r in range(restarts):
            z0 = line + (0.0 if r == 0 else 0.15) * rng.standard_normal(line.shape)
            if isinstance(sys, OracleSystem):
                res = minimize(_action_and_grad, z0.ravel(), args=(sys, x, yk, K, T, quad),
                               jac=True, method="L-BFGS-B")
            else:
                def fun(z):
                    return path_action(sys, np.vstack([x, z.reshape(K - 1, dim), yk]), T, quad)
                res = minimize(fun, z0.ravel(), method="L-BFGS-B")
            best = min(best, float(res.fun))
    return best


def random_path(rng: np.random.Generator, dim: int, K: int, spread: float = 0.3) -> np.ndarray:
    """Random piecewise-linear lifted path with ``K`` segments starting in ``[0, 1)^dim``."""
    start = rng.random(dim)
    steps = spread * rng.standard_normal((K, dim)) / np.sqrt(K)
    return np.vstack([start, start + np.cumsum(steps, axis=0)])


# ---------------------------------------------------------------------------
# convex-hull minimization by dense sampling
# ---------------------------------------------------------------------------


def _simplex_project(w: np.ndarray) -> np.ndarray:
    """Euclidean projection of rows of ``w`` onto the probability simplex."""
    n = w.shape[-1]
    u = -np.sort(-w, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = n - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, (rho - 1)[..., None], -1) / rho[..., None]
    return np.maximum(w - theta, 0.0)


def hull_min_brute_force(points, quad_form: np.ndarray, target, n_samples: int = 1000,
                         rounds: int = 40, seed: int = 0):
    """Minimize ``1/2 (p - target)^T Q (p - target)`` over ``conv(points)`` by sampling.

    ``n_samples`` convex combinations (vertices, edge points and Dirichlet
    draws) seed the search; each refinement round resamples around the best
    weights with a shrinking perturbation.  Returns ``(p, value)``.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    Q = np.asarray(quad_form, dtype=float)
    t = np.asarray(target, dtype=float)
    m = len(P)
    rng = np.random.default_rng(seed)

    def value(W):
        d = W @ P - t
        return 0.5 * np.einsum("ki,ij,kj->k", d, Q, d)

    seeds = [np.eye(m)]
    if m > 1:
        s = np.linspace(0.0, 1.0, 33)
        for i, j in itertools.combinations(range(m), 2):
            W = np.zeros((len(s), m))
            W[:, i], W[:, j] = 1.0 - s, s
            seeds.append(W)
    n_rand = max(n_samples - sum(len(W) for W in seeds), 0)
    if n_rand:
        seeds.append(rng.dirichlet(np.ones(m), n_rand))
    W = np.vstack(seeds)
    vals = value(W)
    k = int(np.argmin(vals))
    w_best, v_best = W[k], float(vals[k])
    scale = 0.25
    for _ in range(rounds):
        cand = _simplex_project(w_best + scale * rng.standard_normal((n_samples, m)))
        vals = value(cand)
        k = int(np.argmin(vals))
        if vals[k] < v_best:
            w_best, v_best = cand[k], float(vals[k])
        scale *= 0.7
    return w_best @ P, v_best


__all__ = [
    "pendulum_solution", "pendulum_potential", "magnetic_critical", "torus_distance",
    "TorusCutLocus", "torus_cut_locus", "hausdorff_to_cut_locus", "OracleSystem",
    "pendulum_system", "magnetic_circle_system", "torus_distance_system", "oracle_systems",
    "path_action", "brute_force_action", "random_path", "hull_min_brute_force",
]
