"""Euler-Maruyama simulation of the randomly forced dissipative flow.

The increment covariance per step is ``2 D dt``, so that with ``beta D = Gamma``
the stationary law is ``exp(-beta E)``, the same law the Fokker-Planck-Kramers
solver in :mod:`eulerarnold.fpk` produces.

Independent chains each own a random stream spawned from the master seed, so
results depend only on ``(seed, chains)`` and never on ``threads``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .algebra import ModelSpec, dissipative_drift, energy
from .errors import BlowUpError, ConfigError

BLOWUP_THRESHOLD = 1e12
CHAIN_GROUP = 64
NOISE_BLOCK = 4096
DEFAULT_ENERGY_EDGES = np.linspace(0.0, 10.0, 51)


def noise_factor(D) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == 2 D``.

    Uses Cholesky when ``2 D`` is positive definite. For singular ``D`` a
    symmetric square root is re-triangularised by QR, which keeps ``L``
    lower-triangular.
    """
    C = 2.0 * np.asarray(D, dtype=float)
    n = C.shape[0]
    if not np.any(C):
        return np.zeros((n, n))
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    w, U = np.linalg.eigh(C)
    S = U * np.sqrt(np.clip(w, 0.0, None))
    # S S^T = C; S^T = Q R  =>  C = R^T R with R^T lower-triangular
    R = np.linalg.qr(S.T, mode="r")
    L = R.T
    signs = np.where(np.diag(L) < 0, -1.0, 1.0)
    return L * signs


def _check_measure(model: ModelSpec, allow_naive: bool) -> None:
    if not model.measure.is_constant and not allow_naive:
        raise ConfigError(
            f"model {model.name!r} has a non-constant invariant measure; the Langevin sampler "
            "only targets the constant-measure theory (pass allow_naive=True to run the naive process)"
        )


def _em_update(model, v, xi, dt, L, sqrt_dt):
    return v + dissipative_drift(model, v) * dt + np.einsum("ab,...b->...a", L, xi) * sqrt_dt


def langevin_step(model: ModelSpec, v, dt: float, rng: np.random.Generator,
                  allow_naive: bool = False, L=None) -> np.ndarray:
    """One Euler-Maruyama step ``v + A(v) dt + L xi sqrt(dt)``."""
    if not dt > 0:
        raise ConfigError("dt must be positive")
    _check_measure(model, allow_naive)
    v = np.asarray(v, dtype=float)
    L = noise_factor(model.D) if L is None else L
    xi = rng.standard_normal(v.shape)
    out = _em_update(model, v, xi, dt, L, np.sqrt(dt))
    if not np.all(np.isfinite(out)) or np.max(np.abs(out)) > BLOWUP_THRESHOLD:
        raise BlowUpError("Langevin state exceeded the blow-up threshold")
    return out


@dataclass
class EnsembleStats:
    """Mergeable summary of retained samples (sums and counts)."""

    count: int
    total: np.ndarray
    outer_total: np.ndarray
    energy_edges: np.ndarray
    energy_counts: np.ndarray
    energy_overflow: int = 0
    samples: Optional[np.ndarray] = None
    label: str = "langevin"
    metadata: dict = field(default_factory=dict)

    @property
    def mean(self) -> np.ndarray:
        return self.total / self.count

    @property
    def second_moments(self) -> np.ndarray:
        """Raw second moments ``<v_a v_b>``."""
        return self.outer_total / self.count

    @property
    def covariance(self) -> np.ndarray:
        m = self.mean
        return self.second_moments - np.outer(m, m)

    def merge(self, other: "EnsembleStats") -> "EnsembleStats":
        if not np.array_equal(self.energy_edges, other.energy_edges):
            raise ValueError("cannot merge statistics with different energy bins")
        if (self.samples is None) != (other.samples is None):
            raise ValueError("cannot merge statistics with and without stored samples")
        return EnsembleStats(
            count=self.count + other.count,
            total=self.total + other.total,
            outer_total=self.outer_total + other.outer_total,
            energy_edges=self.energy_edges,
            energy_counts=self.energy_counts + other.energy_counts,
            energy_overflow=self.energy_overflow + other.energy_overflow,
            samples=None if self.samples is None else np.concatenate([self.samples, other.samples]),
            label=self.label,
            metadata=dict(self.metadata),
        )

    @classmethod
    def from_samples(cls, model, samples, energy_edges, keep_samples=False, label="langevin"):
        samples = np.asarray(samples, dtype=float)
        E = energy(model, samples)
        counts, _ = np.histogram(E, bins=energy_edges)
        return cls(
            count=len(samples),
            total=samples.sum(axis=0),
            outer_total=np.einsum("ka,kb->ab", samples, samples),
            energy_edges=np.asarray(energy_edges, dtype=float),
            energy_counts=counts,
            energy_overflow=int(np.sum(E >= energy_edges[-1])),
            samples=samples.copy() if keep_samples else None,
            label=label,
        )


def chain_streams(seed: int, chains: int):
    """One independent Philox generator per chain, derived from ``(seed, index)``."""
    children = np.random.SeedSequence(int(seed)).spawn(chains)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def _split(samples: int, chains: int):
    base, extra = divmod(samples, chains)
    return [base + (1 if i < extra else 0) for i in range(chains)]


def _run_group(model, v0, L, dt, burn_steps, thin, quotas, rngs):
    """Advance a group of chains together and return their retained samples."""
    k, n = len(quotas), model.dim
    v = np.broadcast_to(v0, (k, n)).copy()
    sqrt_dt = np.sqrt(dt)
    total_steps = burn_steps + max(quotas) * thin
    kept = np.empty((max(quotas), k, n))
    step = 0
    while step < total_steps:
        block = min(NOISE_BLOCK, total_steps - step)
        xi = np.stack([rng.standard_normal((block, n)) for rng in rngs], axis=1)
        for j in range(block):
            v = _em_update(model, v, xi[j], dt, L, sqrt_dt)
            step += 1
            if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > BLOWUP_THRESHOLD:
                raise BlowUpError(f"Langevin state exceeded the blow-up threshold at t={step * dt:.6g}",
                                  last_time=(step - 1) * dt)
            after = step - burn_steps
            if after > 0 and after % thin == 0:
                kept[after // thin - 1] = v
    return [kept[:q, c] for c, q in enumerate(quotas)]


def sample_equilibrium(model: ModelSpec, v0, burn_in: float, samples: int, thin: int, dt: float,
                       seed: int, chains: int = 1, threads: int = 1, energy_edges=None,
                       keep_samples: bool = False, allow_naive: bool = False) -> EnsembleStats:
    """Run ``chains`` independent Langevin chains from ``v0`` and summarise them.

    Each chain discards ``burn_in`` time units, then records every ``thin``-th
    step until ``samples`` states (split evenly across chains) are retained.
    ``threads`` only schedules groups of chains and never changes results.
    """
    if samples <= 0:
        raise ConfigError("samples must be positive")
    if thin < 1 or chains < 1 or threads < 1:
        raise ConfigError("thin, chains and threads must be at least 1")
    if not dt > 0 or burn_in < 0:
        raise ConfigError("dt must be positive and burn_in non-negative")
    _check_measure(model, allow_naive)
    v0 = np.asarray(v0, dtype=float)
    if v0.shape != (model.dim,):
        raise ConfigError(f"initial state has shape {v0.shape}, model dimension is {model.dim}")
    edges = DEFAULT_ENERGY_EDGES if energy_edges is None else np.asarray(energy_edges, dtype=float)
    label = "langevin" if model.measure.is_constant else "naive process"

    L = noise_factor(model.D)
    burn_steps = int(round(burn_in / dt))
    quotas = _split(int(samples), chains)
    rngs = chain_streams(seed, chains)
    groups = [range(i, min(i + CHAIN_GROUP, chains)) for i in range(0, chains, CHAIN_GROUP)]

    def work(group):
        return _run_group(model, v0, L, dt, burn_steps, thin,
                          [quotas[i] for i in group], [rngs[i] for i in group])

    if threads == 1:
        results = [work(g) for g in groups]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, groups))

    stats = None
    for kept in results:
        for chain_samples in kept:
            if len(chain_samples) == 0:
                continue
            part = EnsembleStats.from_samples(model, chain_samples, edges, keep_samples, label)
            stats = part if stats is None else stats.merge(part)
    stats.metadata.update(seed=int(seed), chains=chains, dt=dt, burn_in=burn_in, thin=thin)
    return stats


def einstein_check(model: ModelSpec, beta: float) -> float:
    """Sup-norm violation of the Einstein relation ``beta D = Gamma``."""
    if not beta > 0:
        raise ConfigError("beta must be positive")
    return float(np.max(np.abs(beta * model.D - model.Gamma)))
