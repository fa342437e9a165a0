"""Deterministic geodesic and dissipative flows, closed-form oracles and
rigid-body curvature analysis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import flow_rk4
from .algebra import ModelSpec, dissipative_drift, energy, energy_gradient, geodesic_drift
from .errors import BlowUpError, ConfigError

BLOWUP_THRESHOLD = 1e12
MARGINAL_RTOL = 1e-12


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have the same length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self):
        return len(self.times)


def time_grid(T: float, dt: float) -> np.ndarray:
    """Times ``0, dt, 2 dt, ...`` ending exactly at ``T``.

    When ``T`` is not a multiple of ``dt`` (to 1e-9 relative) the last step is
    shortened.
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    if not T >= dt * (1 - 1e-12):
        raise ConfigError("T must be at least dt")
    n = int(round(T / dt))
    if abs(n * dt - T) <= 1e-9 * T:
        times = np.arange(n + 1) * dt
        times[-1] = T
        return times
    n = int(math.floor(T / dt))
    return np.append(np.arange(n + 1) * dt, T)


def rk4_step(rhs, y, h):
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_solve(rhs, y0, times, threshold=BLOWUP_THRESHOLD):
    """Fixed-step classical Runge-Kutta over ``times``; raises :class:`BlowUpError`."""
    y = np.array(y0, dtype=float)
    out = np.empty((len(times),) + y.shape)
    out[0] = y
    for k in range(1, len(times)):
        y = rk4_step(rhs, y, times[k] - times[k - 1])
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > threshold:
            raise BlowUpError(
                f"state exceeded {threshold:g} at t={times[k]:.6g}", last_time=float(times[k - 1])
            )
        out[k] = y
    return out


def integrate(model: ModelSpec, v0, T: float, dt: float, dissipative: bool = False) -> Trajectory:
    """Integrate the geodesic (or, with ``dissipative``, the damped) flow with RK4.

    ``v0`` may be a single state or a batch ``(k, n)``; states are returned
    with shape ``(len(times), ..., n)``.
    """
    v0 = np.asarray(v0, dtype=float)
    if v0.ndim == 0 or v0.shape[-1] != model.dim:
        raise ConfigError(f"initial state has shape {v0.shape}, model dimension is {model.dim}")
    if not np.all(np.isfinite(v0)):
        raise ConfigError("initial state must be finite")
    times = time_grid(T, dt)
    states = quadratic_flow(model, v0, times, 1.0, -1.0 if dissipative else 0.0)
    return Trajectory(times, states)


def quadratic_flow(model: ModelSpec, v0, times, quadratic: float = 1.0, linear: float = 0.0,
                   threshold: float = BLOWUP_THRESHOLD) -> np.ndarray:
    """RK4 for ``dv/dt = quadratic * V(v) + linear * Gamma G v`` (compiled loop).

    Equivalent to :func:`rk4_solve` with the corresponding drift; ``v0`` may
    be a single state or a batch ``(k, n)``.
    """
    v0 = np.asarray(v0, dtype=float)
    batch = np.ascontiguousarray(v0.reshape(-1, model.dim))
    times = np.ascontiguousarray(times, dtype=float)
    states, failed = flow_rk4(model.quadratic_tensor, model.linear_operator, float(quadratic),
                              float(linear), batch, times, float(threshold))
    if failed >= 0:
        raise BlowUpError(f"state exceeded {threshold:g} at t={times[failed]:.6g}",
                          last_time=float(times[failed - 1]))
    return states.reshape((len(times),) + v0.shape)


def halfplane_geodesic(rho: float, t):
    """Closed-form half-plane geodesic ``(-rho tanh(rho t), rho sech(rho t))``."""
    if not rho > 0:
        raise ConfigError("rho must be positive")
    t = np.asarray(t, dtype=float)
    x = rho * t
    return np.stack([-rho * np.tanh(x), rho / np.cosh(x)], axis=-1)


def energy_series(model: ModelSpec, traj: Trajectory) -> np.ndarray:
    return energy(model, traj.states)


def energy_rate(model: ModelSpec, v, dissipative: bool = True) -> np.ndarray:
    """Instantaneous ``dE/dt = (G v) . drift(v)``."""
    drift = dissipative_drift if dissipative else geodesic_drift
    return np.einsum("...a,...a->...", energy_gradient(model, v), drift(model, v))


@dataclass(frozen=True)
class CurvatureReport:
    """Sectional curvatures of the principal planes of a left-invariant metric on SO(3)."""

    K12: float
    K23: float
    K31: float

    def as_lines(self) -> list:
        return [f"K12={self.K12:.17g}", f"K23={self.K23:.17g}", f"K31={self.K31:.17g}"]


def _curvature_terms(Gi, Gj, Gk):
    """Numerator terms of the sectional curvature of the (j, k) plane."""
    return ((Gj - Gk) ** 2, 2.0 * Gi * (Gj + Gk), -3.0 * Gi ** 2)


def sectional_curvature(G1: float, G2: float, G3: float) -> CurvatureReport:
    """Principal-plane sectional curvatures for diagonal metric coefficients.

    ``K23 = ((G2 - G3)**2 + 2 G1 (G2 + G3) - 3 G1**2) / (4 G1 G2 G3)``, and
    ``K31``, ``K12`` by cyclic permutation. The ``G_i`` are the metric
    coefficients, i.e. the principal moments of inertia for a rigid body.
    """
    if not (G1 > 0 and G2 > 0 and G3 > 0):
        raise ConfigError("metric coefficients must be positive")
    denom = 4.0 * G1 * G2 * G3
    return CurvatureReport(
        K12=sum(_curvature_terms(G3, G1, G2)) / denom,
        K23=sum(_curvature_terms(G1, G2, G3)) / denom,
        K31=sum(_curvature_terms(G2, G3, G1)) / denom,
    )


def cylinder_moments(r: float, h: float, m: float):
    """Principal moments ``(I1, I2, I3)`` of a solid cylinder; axis 3 is the symmetry axis."""
    if not (r > 0 and h > 0 and m > 0):
        raise ConfigError("radius, height and mass must be positive")
    transverse = m * (3.0 * r ** 2 + h ** 2) / 12.0
    return transverse, transverse, m * r ** 2 / 2.0


@dataclass(frozen=True)
class CoinStability:
    classification: str
    curvature: CurvatureReport
    moments: tuple

    def as_lines(self) -> list:
        I1, I2, I3 = self.moments
        return [f"classification={self.classification}", f"I1={I1:.17g}", f"I2={I2:.17g}",
                f"I3={I3:.17g}"] + self.curvature.as_lines()


def coin_stability(r: float, h: float, m: float = 1.0) -> CoinStability:
    """Classify rotations about an axis in the symmetry plane of a cylinder.

    The sign of the in-plane sectional curvature ``K12`` decides: negative is
    ``unstable_in_plane``, positive ``stable_in_plane``; values within
    round-off of zero are ``marginal``. The transition sits at
    ``h = sqrt(3/2) r``.
    """
    I1, I2, I3 = cylinder_moments(r, h, m)
    report = sectional_curvature(I1, I2, I3)
    scale = max(abs(t) for t in _curvature_terms(I3, I1, I2)) / (4.0 * I1 * I2 * I3)
    if abs(report.K12) <= MARGINAL_RTOL * scale:
        label = "marginal"
    elif report.K12 < 0:
        label = "unstable_in_plane"
    else:
        label = "stable_in_plane"
    return CoinStability(label, report, (I1, I2, I3))


def coin_threshold(r: float, m: float = 1.0, tol: float = 1e-10, max_iter: int = 200) -> float:
    """Locate the height where ``K12`` changes sign, by bisection to ``tol``."""
    lo, hi = 1e-3 * r, 10.0 * r

    def k12(h):
        return sectional_curvature(*cylinder_moments(r, h, m)).K12

    f_lo = k12(lo)
    if f_lo * k12(hi) > 0:
        raise ConfigError("K12 does not change sign on the search bracket")
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        f_mid = k12(mid)
        if f_mid == 0:
            return mid
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
