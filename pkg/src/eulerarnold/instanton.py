"""Small-noise (WKB) paths of the randomly forced flow.

With ``P ~ exp(-Phi)`` the Fokker-Planck-Kramers equation reduces, at leading
order, to a Hamilton-Jacobi equation for

    H(v, w) = D_ab w^a w^b + A_a(v) w^a,

``A`` being the dissipative drift and ``w`` the momentum conjugate to ``v``.
The most likely path between two states solves Hamilton's equations for this
``H`` with both end points prescribed; its action

    Phi = int_0^T (w . dv/dt - H) dt

estimates ``-log`` of the transition probability.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._kernels import hamilton_rk4
from .algebra import ModelSpec, dissipative_drift, drift_jacobian
from .dynamics import BLOWUP_THRESHOLD, quadratic_flow, time_grid
from .errors import BlowUpError, ConfigError, ConvergenceError

SHOOT_TOL = 1e-8


@dataclass(frozen=True)
class PhasePoint:
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if v.shape != w.shape:
            raise ConfigError(f"v and w shapes differ: {v.shape} vs {w.shape}")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.v, self.w], axis=-1)

    @classmethod
    def unstack(cls, y) -> "PhasePoint":
        n = y.shape[-1] // 2
        return cls(y[..., :n], y[..., n:])


@dataclass
class InstantonPath:
    times: np.ndarray
    v: np.ndarray
    w: np.ndarray
    H: np.ndarray
    partial_action: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def action(self) -> float:
        return float(self.partial_action[-1])

    @property
    def H_drift(self) -> float:
        return float(np.max(np.abs(self.H - self.H[0])))


def _check(model: ModelSpec, p: PhasePoint) -> None:
    if p.v.shape[-1] != model.dim:
        raise ConfigError(f"phase point has dimension {p.v.shape[-1]}, model dimension is {model.dim}")


def wkb_hamiltonian(model: ModelSpec, p: PhasePoint):
    """``D_ab w^a w^b + A_a(v) w^a``."""
    _check(model, p)
    quad = np.einsum("...a,ab,...b->...", p.w, model.D, p.w)
    return quad + np.einsum("...a,...a->...", dissipative_drift(model, p.v), p.w)


def hamilton_field(model: ModelSpec, p: PhasePoint) -> PhasePoint:
    """Time derivative ``(dH/dw, -dH/dv)`` from the analytic derivatives of ``H``."""
    _check(model, p)
    dv = 2.0 * np.einsum("ab,...b->...a", model.D, p.w) + dissipative_drift(model, p.v)
    dw = -np.einsum("...ae,...a->...e", drift_jacobian(model, p.v), p.w)
    return PhasePoint(dv, dw)


def hamilton_solve(model: ModelSpec, y0, times, threshold: float = BLOWUP_THRESHOLD) -> np.ndarray:
    """RK4 solution of Hamilton's equations from the stacked state ``y0 = (v, w)``.

    Runs a compiled loop with the same vector field as :func:`hamilton_field`.
    """
    times = np.ascontiguousarray(times, dtype=float)
    ys, failed = hamilton_rk4(model.quadratic_tensor, model.linear_operator, 2.0 * model.D,
                              np.ascontiguousarray(y0, dtype=float), times, float(threshold))
    if failed >= 0:
        raise BlowUpError(f"phase point exceeded {threshold:g} at t={times[failed]:.6g}",
                          last_time=float(times[failed - 1]))
    return ys


def integrate_instanton(model: ModelSpec, p0: PhasePoint, T: float, dt: float) -> InstantonPath:
    """RK4 integration of Hamilton's equations with the action accumulated by the trapezoid rule."""
    _check(model, p0)
    times = time_grid(T, dt)
    ys = hamilton_solve(model, p0.stacked(), times)
    pts = PhasePoint.unstack(ys)
    H = wkb_hamiltonian(model, pts)
    vdot = hamilton_field(model, pts).v
    lagrangian = np.einsum("ka,ka->k", pts.w, vdot) - H
    partial = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(times) * (lagrangian[1:] + lagrangian[:-1]))])
    return InstantonPath(times, pts.v, pts.w, H, partial)


def _endpoint(model, v_start, w0, times):
    y = hamilton_solve(model, np.concatenate([v_start, w0]), times)
    return y[-1, : model.dim]


def _newton(model, v_start, v_end, times, w0, max_iter, tol):
    """Damped Newton on ``w(0) -> v(T) - v_end``; returns ``(w0, residual, iterations)``."""
    n = model.dim
    w = np.array(w0, dtype=float)
    try:
        F = _endpoint(model, v_start, w, times) - v_end
    except BlowUpError:
        return w, np.inf, 0
    res = float(np.linalg.norm(F))
    for it in range(max_iter):
        if res < tol:
            return w, res, it
        J = np.empty((n, n))
        for j in range(n):
            h = 1e-6 * (1.0 + abs(w[j]))
            wp = w.copy()
            wp[j] += h
            try:
                J[:, j] = (_endpoint(model, v_start, wp, times) - v_end - F) / h
            except BlowUpError:
                return w, res, it
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -F, rcond=None)[0]
        lam = 1.0
        for _ in range(40):
            trial = w + lam * step
            try:
                F_trial = _endpoint(model, v_start, trial, times) - v_end
                res_trial = float(np.linalg.norm(F_trial))
            except BlowUpError:
                res_trial = np.inf
            if res_trial < res:
                w, F, res = trial, F_trial, res_trial
                break
            lam *= 0.5
        else:
            return w, res, it + 1
    return w, res, max_iter


def shoot(model: ModelSpec, v_start, v_end, T: float, dt: float, w_guess=None,
          guesses: Sequence = (), max_iter: int = 50, tol: float = SHOOT_TOL,
          threads: int = 1) -> InstantonPath:
    """Solve the two-point problem ``v(0) = v_start``, ``v(T) = v_end`` by shooting on ``w(0)``.

    The default guess (``w_guess``, zero if omitted) is tried first. If it
    stalls, every entry of ``guesses`` is tried; among converged candidates the
    one with least action wins, ties going to the earliest guess.
    """
    v_start = np.asarray(v_start, dtype=float)
    v_end = np.asarray(v_end, dtype=float)
    if v_start.shape != (model.dim,) or v_end.shape != (model.dim,):
        raise ConfigError("end points must match the model dimension")
    if not T > 0:
        raise ConfigError("T must be positive")
    times = time_grid(T, dt)
    starts = [np.zeros(model.dim) if w_guess is None else np.asarray(w_guess, dtype=float)]
    starts += [np.asarray(g, dtype=float) for g in guesses]
    for g in starts:
        if g.shape != (model.dim,):
            raise ConfigError("guesses must match the model dimension")

    def attempt(i):
        w0, res, its = _newton(model, v_start, v_end, times, starts[i], max_iter, tol)
        if res >= tol:
            return i, None, res
        path = integrate_instanton(model, PhasePoint(v_start, w0), T, dt)
        path.info.update(residual=res, iterations=its, start_index=i)
        return i, path, res

    first = attempt(0)
    results = [first]
    if first[1] is None and len(starts) > 1:
        rest = range(1, len(starts))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results += list(pool.map(attempt, rest))
        else:
            results += [attempt(i) for i in rest]
    converged = [(path.action, i, path) for i, path, _ in results if path is not None]
    if not converged:
        best = min(res for _, _, res in results)
        raise ConvergenceError(f"shooting did not converge; best residual {best:.3g}", best=best)
    return min(converged, key=lambda c: (c[0], c[1]))[2]


def relaxation_guess(model: ModelSpec, v_end, T: float, dt: float, beta: float):
    """Start ``(w0, v0)`` of the fluctuation path ``w = beta G v`` ending at ``v_end``.

    For ``beta D = Gamma`` the reduced flow along ``w = beta G v`` is
    ``dv/dt = Gamma G v + V(v)``; it is integrated backwards from ``v_end``
    for a time ``T`` and ``beta G`` applied to where it lands.
    """
    times = time_grid(T, dt)
    v0 = quadratic_flow(model, np.asarray(v_end, dtype=float), times, -1.0, -1.0)[-1]
    return beta * (model.G @ v0), v0


def ansatz_residual(model: ModelSpec, v, beta: float) -> float:
    """Max deviation of ``d(beta G v)/dt`` from ``dw/dt`` on ``w = beta G v``.

    Zero (to round-off) when ``beta D = Gamma``: the fluctuation path is then
    an exact solution of Hamilton's equations.
    """
    v = np.asarray(v, dtype=float)
    f = hamilton_field(model, PhasePoint(v, beta * np.einsum("ab,...b->...a", model.G, v)))
    return float(np.max(np.abs(beta * np.einsum("ab,...b->...a", model.G, f.v) - f.w)))
