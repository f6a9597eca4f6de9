"""Compiled inner loops for the upwind solvers.

The local solver evaluates the control formulation of
``||Du + omega||_{g*} = s`` at one node: the value is the minimum over
neighbouring nodes (edges) and neighbouring triangles of
``u(y) + s |x - y|_g - omega(x - y)`` with coefficients frozen at the
average of the participating nodes.  On isotropic metrics with ``omega = 0``
this is the usual first-order Godunov/Tsitsiklis update.
"""

import heapq

import numpy as np
from numba import njit

INF = np.inf

# 8-neighbourhood in counter-clockwise order; consecutive pairs form triangles
OFF8 = np.array(
    [[1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1]], dtype=np.int64
)


@njit(cache=True)
def _local_1d(u, s, g, om, i, n, h, acc, use_acc):
    best = INF
    for di in (-1, 1):
        k = (i + di) % n
        if use_acc and not acc[k]:
            continue
        uy = u[k]
        if uy == INF:
            continue
        e = di * h
        sb = 0.5 * (s[i] + s[k])
        gb = 0.5 * (g[i] + g[k])
        ob = 0.5 * (om[i] + om[k])
        val = uy + sb * np.sqrt(gb) * abs(e) + ob * e
        if val < best:
            best = val
    return best


@njit(cache=True)
def _local_2d(u, s, g, om, i, j, n, h, acc, use_acc):
    best = INF
    for k in range(8):
        ii = (i + OFF8[k, 0]) % n
        jj = (j + OFF8[k, 1]) % n
        if use_acc and not acc[ii, jj]:
            continue
        uy = u[ii, jj]
        if uy == INF:
            continue
        ex = OFF8[k, 0] * h
        ey = OFF8[k, 1] * h
        sb = 0.5 * (s[i, j] + s[ii, jj])
        g00 = 0.5 * (g[i, j, 0, 0] + g[ii, jj, 0, 0])
        g01 = 0.5 * (g[i, j, 0, 1] + g[ii, jj, 0, 1])
        g11 = 0.5 * (g[i, j, 1, 1] + g[ii, jj, 1, 1])
        ox = 0.5 * (om[i, j, 0] + om[ii, jj, 0])
        oy = 0.5 * (om[i, j, 1] + om[ii, jj, 1])
        q = g00 * ex * ex + 2.0 * g01 * ex * ey + g11 * ey * ey
        val = uy + sb * np.sqrt(q) + ox * ex + oy * ey
        if val < best:
            best = val
    for k in range(8):
        k2 = (k + 1) % 8
        i1 = (i + OFF8[k, 0]) % n
        j1 = (j + OFF8[k, 1]) % n
        i2 = (i + OFF8[k2, 0]) % n
        j2 = (j + OFF8[k2, 1]) % n
        if use_acc and not (acc[i1, j1] and acc[i2, j2]):
            continue
        u1 = u[i1, j1]
        u2 = u[i2, j2]
        if u1 == INF or u2 == INF:
            continue
        sb = 0.5 * s[i, j] + 0.25 * (s[i1, j1] + s[i2, j2])
        if sb <= 0.0:
            continue
        g00 = 0.5 * g[i, j, 0, 0] + 0.25 * (g[i1, j1, 0, 0] + g[i2, j2, 0, 0])
        g01 = 0.5 * g[i, j, 0, 1] + 0.25 * (g[i1, j1, 0, 1] + g[i2, j2, 0, 1])
        g11 = 0.5 * g[i, j, 1, 1] + 0.25 * (g[i1, j1, 1, 1] + g[i2, j2, 1, 1])
        ox = 0.5 * om[i, j, 0] + 0.25 * (om[i1, j1, 0] + om[i2, j2, 0])
        oy = 0.5 * om[i, j, 1] + 0.25 * (om[i1, j1, 1] + om[i2, j2, 1])
        e1x = OFF8[k, 0] * h
        e1y = OFF8[k, 1] * h
        dx = OFF8[k2, 0] * h - e1x
        dy = OFF8[k2, 1] * h - e1y
        A = g00 * dx * dx + 2.0 * g01 * dx * dy + g11 * dy * dy
        B = g00 * e1x * dx + g01 * (e1x * dy + e1y * dx) + g11 * e1y * dy
        C = g00 * e1x * e1x + 2.0 * g01 * e1x * e1y + g11 * e1y * e1y
        disc = A * C - B * B
        if A <= 0.0 or disc <= 0.0:
            continue
        beta = (u2 - u1) + ox * dx + oy * dy
        r = -beta / (sb * np.sqrt(A))
        if abs(r) >= 1.0:
            continue
        t = r * np.sqrt(disc) / np.sqrt(1.0 - r * r)
        th = (t - B) / A
        if th <= 0.0 or th >= 1.0:
            continue
        q = A * th * th + 2.0 * B * th + C
        val = u1 + th * (u2 - u1) + ox * (e1x + th * dx) + oy * (e1y + th * dy) + sb * np.sqrt(q)
        if val < best:
            best = val
    return best


@njit(cache=True)
def sweep_1d(u, fixed, active, s, g, om, h, tol, max_sweeps):
    """Gauss-Seidel sweeps until the largest update is below ``tol``.

    Returns the number of sweeps, or ``-1`` when the cap is hit.
    """
    n = u.shape[0]
    acc = np.ones(n, dtype=np.bool_)
    for it in range(max_sweeps):
        change = 0.0
        for direction in (1, -1):
            for step in range(n):
                i = step if direction == 1 else n - 1 - step
                if fixed[i] or not active[i]:
                    continue
                new = _local_1d(u, s, g, om, i, n, h, acc, False)
                if new < u[i] - 1e-15 * (1.0 + abs(new)):
                    d = u[i] - new
                    if d > change or u[i] == INF:
                        change = d if u[i] != INF else INF
                    u[i] = new
        if change <= tol:
            return it + 1
    return -1


@njit(cache=True)
def sweep_2d(u, fixed, active, s, g, om, h, tol, max_sweeps):
    n = u.shape[0]
    acc = np.ones((n, n), dtype=np.bool_)
    for it in range(max_sweeps):
        change = 0.0
        for order in range(4):
            for a in range(n):
                i = a if order in (0, 3) else n - 1 - a
                for b in range(n):
                    j = b if order in (0, 1) else n - 1 - b
                    if fixed[i, j] or not active[i, j]:
                        continue
                    new = _local_2d(u, s, g, om, i, j, n, h, acc, False)
                    if new < u[i, j] - 1e-15 * (1.0 + abs(new)):
                        if u[i, j] == INF:
                            change = INF
                        elif u[i, j] - new > change:
                            change = u[i, j] - new
                        u[i, j] = new
        if change <= tol:
            return it + 1
    return -1


@njit(cache=True)
def march_1d(u, accepted, active, s, g, h):
    n = u.shape[0]
    om = np.zeros(n)
    heap = [(0.0, np.int64(0))]
    heap.pop()
    for i in range(n):
        if accepted[i]:
            for di in (-1, 1):
                k = (i + di) % n
                if not accepted[k] and active[k]:
                    v = _local_1d(u, s, g, om, k, n, h, accepted, True)
                    if v < u[k]:
                        u[k] = v
                        heapq.heappush(heap, (v, np.int64(k)))
    while len(heap) > 0:
        v, i = heapq.heappop(heap)
        if accepted[i] or v > u[i]:
            continue
        accepted[i] = True
        for di in (-1, 1):
            k = (i + di) % n
            if not accepted[k] and active[k]:
                w = _local_1d(u, s, g, om, k, n, h, accepted, True)
                if w < u[k]:
                    u[k] = w
                    heapq.heappush(heap, (w, np.int64(k)))


@njit(cache=True)
def march_2d(u, accepted, active, s, g, h):
    n = u.shape[0]
    om = np.zeros((n, n, 2))
    heap = [(0.0, np.int64(0), np.int64(0))]
    heap.pop()
    for i in range(n):
        for j in range(n):
            if not accepted[i, j]:
                continue
            for k in range(8):
                ii = (i + OFF8[k, 0]) % n
                jj = (j + OFF8[k, 1]) % n
                if accepted[ii, jj] or not active[ii, jj]:
                    continue
                v = _local_2d(u, s, g, om, ii, jj, n, h, accepted, True)
                if v < u[ii, jj]:
                    u[ii, jj] = v
                    heapq.heappush(heap, (v, np.int64(ii), np.int64(jj)))
    while len(heap) > 0:
        v, i, j = heapq.heappop(heap)
        if accepted[i, j] or v > u[i, j]:
            continue
        accepted[i, j] = True
        for k in range(8):
            ii = (i + OFF8[k, 0]) % n
            jj = (j + OFF8[k, 1]) % n
            if accepted[ii, jj] or not active[ii, jj]:
                continue
            w = _local_2d(u, s, g, om, ii, jj, n, h, accepted, True)
            if w < u[ii, jj]:
                u[ii, jj] = w
                heapq.heappush(heap, (w, np.int64(ii), np.int64(jj)))


@njit(cache=True)
def discrete_frechet(P, Q, period):
    """Discrete Frechet distance between two polylines.

    Point distances use the minimal image when ``period`` is positive.
    """
    n = P.shape[0]
    m = Q.shape[0]
    d = P.shape[1]
    ca = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = Q[j, k] - P[i, k]
                if period > 0.0:
                    diff -= period * np.rint(diff / period)
                acc += diff * diff
            dist = np.sqrt(acc)
            if i == 0 and j == 0:
                ca[i, j] = dist
            elif i == 0:
                ca[i, j] = max(ca[i, j - 1], dist)
            elif j == 0:
                ca[i, j] = max(ca[i - 1, j], dist)
            else:
                prev = min(ca[i - 1, j], min(ca[i - 1, j - 1], ca[i, j - 1]))
                ca[i, j] = max(prev, dist)
    return ca[n - 1, m - 1]
