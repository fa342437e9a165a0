"""Compiled fixed-step RK4 loops for the quadratic flows.

Both vector fields are polynomial in the state and are fully described by
``K[a, c, d] = f[a, b, c] G[b, d]`` and a linear operator, so the loops take
plain arrays and never call back into Python.

Return convention: ``(states, failed_at)`` where ``failed_at`` is ``-1`` on
success, otherwise the index of the first step whose state exceeded the
threshold or became non-finite (rows from that index on are undefined).
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _flow(K, Lop, cq, cl, v):
    n = v.shape[0]
    out = np.empty(n)
    for a in range(n):
        s = 0.0
        for c in range(n):
            kv = 0.0
            for d in range(n):
                kv += K[a, c, d] * v[d]
            s += cq * kv * v[c] + cl * Lop[a, c] * v[c]
        out[a] = s
    return out


@njit(cache=True)
def _bad(y, threshold):
    for x in y:
        if not abs(x) <= threshold:
            return True
    return False


@njit(cache=True)
def flow_rk4(K, Lop, cq, cl, v0, times, threshold):
    """Integrate ``dv/dt = cq K v v + cl Lop v`` for each row of ``v0``."""
    m, n = v0.shape
    out = np.empty((times.shape[0], m, n))
    out[0] = v0
    for r in range(m):
        y = v0[r].copy()
        for k in range(1, times.shape[0]):
            h = times[k] - times[k - 1]
            k1 = _flow(K, Lop, cq, cl, y)
            k2 = _flow(K, Lop, cq, cl, y + 0.5 * h * k1)
            k3 = _flow(K, Lop, cq, cl, y + 0.5 * h * k2)
            k4 = _flow(K, Lop, cq, cl, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if _bad(y, threshold):
                return out, k
            out[k, r] = y
    return out, -1


@njit(cache=True)
def _hamilton(K, Lop, D2, y):
    n = y.shape[0] // 2
    out = np.empty(2 * n)
    # J[a, e] = sum_d K[a, e, d] v_d + sum_c K[a, c, e] v_c - Lop[a, e]
    J = np.empty((n, n))
    for a in range(n):
        for e in range(n):
            s = -Lop[a, e]
            for d in range(n):
                s += K[a, e, d] * y[d] + K[a, d, e] * y[d]
            J[a, e] = s
    for a in range(n):
        s = 0.0
        for b in range(n):
            s += D2[a, b] * y[n + b] - Lop[a, b] * y[b]
            kv = 0.0
            for d in range(n):
                kv += K[a, b, d] * y[d]
            s += kv * y[b]
        out[a] = s
    for e in range(n):
        s = 0.0
        for a in range(n):
            s -= J[a, e] * y[n + a]
        out[n + e] = s
    return out


@njit(cache=True)
def hamilton_rk4(K, Lop, D2, y0, times, threshold):
    """Integrate Hamilton's equations of the WKB Hamiltonian from ``y0 = (v, w)``."""
    out = np.empty((times.shape[0], y0.shape[0]))
    out[0] = y0
    y = y0.copy()
    for k in range(1, times.shape[0]):
        h = times[k] - times[k - 1]
        k1 = _hamilton(K, Lop, D2, y)
        k2 = _hamilton(K, Lop, D2, y + 0.5 * h * k1)
        k3 = _hamilton(K, Lop, D2, y + 0.5 * h * k2)
        k4 = _hamilton(K, Lop, D2, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if _bad(y, threshold):
            return out, k
        out[k] = y
    return out, -1
