import itertools

import numpy as np
import pytest

from eulerarnold.models import builtin


def brute_jacobi(f):
    """Reference Jacobi residual by explicit loops over every index quadruple."""
    f = np.asarray(f)
    n = f.shape[0]
    worst = 0.0
    for a, b, c, d in itertools.product(range(n), repeat=4):
        s = sum(f[a, b, e] * f[e, c, d] + f[b, c, e] * f[e, a, d] + f[c, a, e] * f[e, b, d]
                for e in range(n))
        worst = max(worst, abs(s))
    return worst


def brute_geodesic_drift(f, G, v):
    """Reference drift V_a = sum_{b,c,d} f[a,b,c] G[b,d] v_c v_d by explicit loops."""
    n = len(v)
    out = np.zeros(n)
    for a, b, c, d in itertools.product(range(n), repeat=4):
        out[a] += f[a, b, c] * G[b, d] * v[c] * v[d]
    return out


def random_psd(rng, n, rank=None):
    A = rng.standard_normal((n, n if rank is None else rank))
    return A @ A.T


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(params=["so3", "halfplane", "abelian1", "heisenberg"])
def builtin_model(request):
    return builtin(request.param)
