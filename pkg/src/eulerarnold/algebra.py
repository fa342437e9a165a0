"""Defining data of an Euler-Arnold model and its algebraic checks.

A model is a Lie algebra, given by structure constants ``f[a, b, c]`` with
``{v_a, v_b} = f[a, b, c] v_c``, together with three symmetric tensors:
the kinetic metric ``G`` (energy ``E = 1/2 G^{ab} v_a v_b``), the dissipation
tensor ``Gamma`` and the noise covariance ``D``. The invariant measure ``mu``
of the ideal (geodesic) flow completes the description.

All drift functions accept a single state of shape ``(n,)`` or a batch of
shape ``(..., n)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError

JACOBI_TOL = 1e-12
SYMMETRY_TOL = 1e-14
PSD_TOL = 1e-14


@dataclass(frozen=True)
class StructureConstants:
    """Structure constants ``f[a, b, c]`` of an ``n``-dimensional Lie algebra.

    Antisymmetry in the first two indices is enforced on construction. The
    Jacobi identity is *measured* by :func:`jacobi_residual` and enforced when
    the constants are bundled into a :class:`ModelSpec`.
    """

    f: np.ndarray

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        if f.ndim != 3 or not (f.shape[0] == f.shape[1] == f.shape[2]) or f.shape[0] < 1:
            raise ConfigError(f"structure constants must have shape (n, n, n), got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ConfigError("structure constants must be finite")
        scale = max(1.0, float(np.max(np.abs(f))))
        if np.max(np.abs(f + f.transpose(1, 0, 2))) > SYMMETRY_TOL * scale:
            raise ConfigError("structure constants are not antisymmetric in the first two indices")
        f.setflags(write=False)
        object.__setattr__(self, "f", f)

    @property
    def dim(self) -> int:
        return self.f.shape[0]

    @classmethod
    def from_triples(cls, n: int, entries) -> "StructureConstants":
        """Build from ``(a, b, c, value)`` entries, completing ``f[b, a, c] = -value``."""
        f = np.zeros((n, n, n))
        seen = {}
        for entry in entries:
            if len(entry) != 4:
                raise ConfigError(f"structure constant entry must be [a, b, c, value], got {entry!r}")
            a, b, c = (int(x) for x in entry[:3])
            value = float(entry[3])
            if not all(0 <= i < n for i in (a, b, c)):
                raise ConfigError(f"index out of range in entry {entry!r} for dim={n}")
            if a == b and value != 0.0:
                raise ConfigError(f"f[{a}][{a}][{c}] must vanish by antisymmetry")
            for key, val in (((a, b, c), value), ((b, a, c), -value)):
                if key in seen and seen[key] != val:
                    raise ConfigError(f"conflicting values for f{list(key)}")
                seen[key] = val
                f[key] = val
        return cls(f)


def so3() -> StructureConstants:
    """Rotation algebra, ``f[i, j, k] = epsilon_ijk``."""
    f = np.zeros((3, 3, 3))
    for i, j, k in itertools.permutations(range(3)):
        f[i, j, k] = np.linalg.det(np.eye(3)[[i, j, k]])
    return StructureConstants(f)


def halfplane() -> StructureConstants:
    # f[0,1,1] = -1 reproduces dv0/dt = -v1^2, dv1/dt = v0 v1 under the drift convention below
    return StructureConstants.from_triples(2, [(0, 1, 1, -1.0)])


def abelian(n: int = 1) -> StructureConstants:
    return StructureConstants(np.zeros((n, n, n)))


def heisenberg() -> StructureConstants:
    """Three-dimensional Heisenberg algebra, ``{v_0, v_1} = v_2``."""
    return StructureConstants.from_triples(3, [(0, 1, 2, 1.0)])


def jacobi_residual(f) -> float:
    """Maximum absolute violation of the Jacobi identity.

    Evaluates ``sum_e f[a,b,e] f[e,c,d] + f[b,c,e] f[e,a,d] + f[c,a,e] f[e,b,d]``
    for every index quadruple and returns the largest magnitude.
    """
    f = f.f if isinstance(f, StructureConstants) else np.asarray(f, dtype=float)
    if f.ndim != 3 or not (f.shape[0] == f.shape[1] == f.shape[2]):
        raise ConfigError(f"structure constants must have shape (n, n, n), got {f.shape}")
    # T[a,b,c,d] = sum_e f[a,b,e] f[e,c,d]
    t = np.einsum("abe,ecd->abcd", f, f)
    cyclic = t + t.transpose(1, 2, 0, 3) + t.transpose(2, 0, 1, 3)
    return float(np.max(np.abs(cyclic))) if cyclic.size else 0.0


def unimodularity_trace(f) -> np.ndarray:
    """Trace vector ``t_b = sum_a f[a, b, a]``; the algebra is unimodular iff it vanishes."""
    f = f.f if isinstance(f, StructureConstants) else np.asarray(f, dtype=float)
    return np.einsum("aba->b", f)


def is_unimodular(f, tol: float = 0.0) -> bool:
    return bool(np.all(np.abs(unimodularity_trace(f)) <= tol))


@dataclass(frozen=True)
class InvariantMeasure:
    """Measure density ``mu(v) = coefficient * prod_a |v_a|**powers[a] + offset``.

    ``kind`` is one of ``"constant"`` (``mu = 1``), ``"halfplane"``
    (``mu = 1/v_1``) or ``"custom"``.
    """

    kind: str = "constant"
    powers: Optional[Tuple[float, ...]] = None
    coefficient: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "halfplane", "custom"):
            raise ConfigError(f"unknown measure kind {self.kind!r}")
        if self.kind == "constant":
            if self.powers is not None or self.coefficient != 1.0 or self.offset != 0.0:
                raise ConfigError("constant measure takes no parameters")
        elif self.kind == "halfplane":
            object.__setattr__(self, "powers", (0.0, -1.0))
            if self.coefficient != 1.0 or self.offset != 0.0:
                raise ConfigError("halfplane measure takes no parameters")
        else:
            if self.powers is None:
                raise ConfigError("custom measure requires powers")
            object.__setattr__(self, "powers", tuple(float(p) for p in self.powers))
            if self.coefficient < 0 or self.offset < 0 or self.coefficient + self.offset <= 0:
                raise ConfigError("custom measure must be positive")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "constant":
            return np.ones(v.shape[:-1]) if v.ndim > 1 else np.float64(1.0)
        powers = np.asarray(self.powers)
        if powers.shape[0] != v.shape[-1]:
            raise ConfigError("measure powers do not match the state dimension")
        with np.errstate(divide="ignore"):
            out = np.prod(np.abs(v) ** powers, axis=-1)
        return self.coefficient * out + self.offset

    def singular_coordinates(self) -> Tuple[int, ...]:
        """Coordinates ``a`` where ``mu`` is not smooth at ``v_a = 0``."""
        if self.kind == "constant":
            return ()
        return tuple(
            a for a, p in enumerate(self.powers) if p < 0 or not float(p).is_integer()
        )

    def near_singularity(self, v, h: float) -> bool:
        v = np.asarray(v, dtype=float)
        return any(abs(v[a]) <= h for a in self.singular_coordinates())


def _symmetric(m, n: int, name: str, positive_definite: bool) -> np.ndarray:
    m = np.array(m, dtype=float)
    if m.ndim == 0:
        m = m * np.eye(n)
    elif m.ndim == 1 and m.shape[0] == n * n and n > 1:
        m = m.reshape(n, n)
    elif m.ndim == 1 and m.shape[0] == n:
        m = np.diag(m)
    if m.shape != (n, n):
        raise ConfigError(f"{name} must be {n}x{n}, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ConfigError(f"{name} must be finite")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > SYMMETRY_TOL * scale:
        raise ConfigError(f"{name} is not symmetric")
    m = 0.5 * (m + m.T)
    eig = np.linalg.eigvalsh(m)
    if positive_definite and eig[0] <= 0:
        raise ConfigError(f"{name} must be positive definite (min eigenvalue {eig[0]:g})")
    if eig[0] < -PSD_TOL * scale:
        raise ConfigError(f"{name} must be positive semidefinite (min eigenvalue {eig[0]:g})")
    m.setflags(write=False)
    return m


Bound = Tuple[Optional[float], Optional[float]]


@dataclass(frozen=True)
class ModelSpec:
    """One experiment definition: algebra, metric, dissipation, noise and measure.

    ``G``, ``Gamma`` and ``D`` may be given as scalars (multiples of the
    identity), diagonals, or full matrices. ``domain`` holds optional
    ``(min, max)`` bounds per coordinate, ``None`` meaning unbounded.
    """

    name: str
    algebra: StructureConstants
    G: np.ndarray = None
    Gamma: np.ndarray = 0.0
    D: np.ndarray = 0.0
    measure: InvariantMeasure = field(default_factory=InvariantMeasure)
    domain: Optional[Tuple[Bound, ...]] = None

    def __post_init__(self):
        if not isinstance(self.algebra, StructureConstants):
            object.__setattr__(self, "algebra", StructureConstants(self.algebra))
        n = self.algebra.dim
        res = jacobi_residual(self.algebra)
        if res > JACOBI_TOL:
            raise ConfigError(f"structure constants violate the Jacobi identity (residual {res:g})")
        G = np.eye(n) if self.G is None else self.G
        object.__setattr__(self, "G", _symmetric(G, n, "G", positive_definite=True))
        object.__setattr__(self, "Gamma", _symmetric(self.Gamma, n, "Gamma", positive_definite=False))
        object.__setattr__(self, "D", _symmetric(self.D, n, "D", positive_definite=False))
        if self.measure.powers is not None and len(self.measure.powers) != n:
            raise ConfigError(f"measure has {len(self.measure.powers)} powers for dim={n}")
        if self.domain is not None:
            dom = []
            for bound in self.domain:
                lo, hi = (None, None) if bound is None else bound
                lo = None if lo is None or lo == -np.inf else float(lo)
                hi = None if hi is None or hi == np.inf else float(hi)
                if lo is not None and hi is not None and not lo < hi:
                    raise ConfigError(f"empty domain interval ({lo}, {hi})")
                dom.append((lo, hi))
            if len(dom) != n:
                raise ConfigError(f"domain has {len(dom)} intervals for dim={n}")
            object.__setattr__(self, "domain", tuple(dom))

    @property
    def dim(self) -> int:
        return self.algebra.dim

    @property
    def f(self) -> np.ndarray:
        return self.algebra.f

    @cached_property
    def quadratic_tensor(self) -> np.ndarray:
        """``K[a, c, d] = sum_b f[a, b, c] G[b, d]``, so the geodesic drift is ``K v v``."""
        return np.einsum("abc,bd->acd", self.f, self.G)

    @cached_property
    def linear_operator(self) -> np.ndarray:
        """``Gamma G``, the linear part of the dissipative drift (with a minus sign)."""
        return self.Gamma @ self.G

    def replace(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    def contains(self, v) -> bool:
        if self.domain is None:
            return True
        v = np.asarray(v, dtype=float)
        for x, (lo, hi) in zip(v, self.domain):
            if (lo is not None and x <= lo) or (hi is not None and x >= hi):
                return False
        return True


def _state(model: ModelSpec, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[-1] != model.dim:
        raise ConfigError(f"state has shape {v.shape}, model dimension is {model.dim}")
    return v


def energy(model: ModelSpec, v) -> np.ndarray:
    """Kinetic energy ``E = 1/2 G^{ab} v_a v_b``."""
    v = _state(model, v)
    return 0.5 * np.einsum("...a,ab,...b->...", v, model.G, v)


def energy_gradient(model: ModelSpec, v) -> np.ndarray:
    return np.einsum("ab,...b->...a", model.G, _state(model, v))


def geodesic_drift(model: ModelSpec, v) -> np.ndarray:
    """Euler-Arnold vector field ``V_a = f[a,b,c] G^{bd} v_c v_d``."""
    v = _state(model, v)
    return np.einsum("acd,...c,...d->...a", model.quadratic_tensor, v, v)


def dissipative_drift(model: ModelSpec, v) -> np.ndarray:
    """Geodesic drift minus ``Gamma G v``."""
    v = _state(model, v)
    return geodesic_drift(model, v) - np.einsum("ab,...b->...a", model.linear_operator, v)


def linear_drift(model: ModelSpec, v) -> np.ndarray:
    """Dissipative part alone, ``-Gamma G v`` (the zero-Hamiltonian variant)."""
    v = _state(model, v)
    return -np.einsum("ab,...b->...a", model.linear_operator, v)


def drift_jacobian(model: ModelSpec, v) -> np.ndarray:
    """``J[..., a, e] = d(dissipative_drift)_a / dv_e``."""
    v = _state(model, v)
    K = model.quadratic_tensor
    quad = np.einsum("aed,...d->...ae", K, v) + np.einsum("ace,...c->...ae", K, v)
    return quad - model.linear_operator


def measure_divergence_residual(model: ModelSpec, v, h: float = 1e-4) -> float:
    """Central-difference estimate of ``sum_a d(mu V_a)/dv_a`` for the geodesic drift.

    Vanishes to ``O(h**2)`` when ``model.measure`` is invariant under the
    geodesic flow.
    """
    v = _state(model, v)
    if v.ndim != 1:
        raise ConfigError("measure_divergence_residual takes a single state")
    if not h > 0:
        raise ConfigError("step h must be positive")
    if model.measure.near_singularity(v, h):
        raise ConfigError(f"state {v.tolist()} lies within h={h:g} of a measure singularity")
    total = 0.0
    for a in range(model.dim):
        step = np.zeros(model.dim)
        step[a] = h
        plus = model.measure(v + step) * geodesic_drift(model, v + step)[a]
        minus = model.measure(v - step) * geodesic_drift(model, v - step)[a]
        total += (plus - minus) / (2 * h)
    return float(total)


def check_dimensions(model: ModelSpec, *states: Sequence[float]) -> None:
    for s in states:
        _state(model, s)
