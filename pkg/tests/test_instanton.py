import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eulerarnold.algebra import dissipative_drift, geodesic_drift
from eulerarnold.dynamics import quadratic_flow, rk4_solve, time_grid
from eulerarnold.errors import BlowUpError, ConfigError, ConvergenceError
from eulerarnold.instanton import (PhasePoint, ansatz_residual, hamilton_field, hamilton_solve,
                                   integrate_instanton, relaxation_guess, shoot, wkb_hamiltonian)
from eulerarnold.models import builtin

from conftest import random_psd

coord = st.floats(-3, 3, allow_nan=False)


def halfplane_half_noise(gamma=1.0):
    """Half-plane model with 2 D = identity."""
    return builtin("halfplane", gamma=gamma, D=0.5)


def general_model(rng):
    """Rigid body with a random metric and random (non-Einstein) dissipation and noise."""
    G = 0.3 * random_psd(rng, 3) + np.eye(3)
    return builtin("so3", G=G, Gamma=0.3 * random_psd(rng, 3), D=0.3 * random_psd(rng, 3))


class TestHamiltonian:
    def test_zero_momentum(self, rng):
        m = general_model(rng)
        assert float(wkb_hamiltonian(m, PhasePoint(rng.standard_normal(3), np.zeros(3)))) == 0.0

    def test_abelian_value(self):
        m = builtin("abelian1", gamma=1.0, D=0.5)
        assert float(wkb_hamiltonian(m, PhasePoint([1.0], [2.0]))) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(coord, coord, coord, coord, st.floats(0, 2))
    def test_halfplane_expression(self, v0, v1, w0, w1, gamma):
        H = float(wkb_hamiltonian(halfplane_half_noise(gamma), PhasePoint([v0, v1], [w0, w1])))
        expected = 0.5 * (w0 ** 2 + w1 ** 2) + (-gamma * v0 - v1 ** 2) * w0 + (-gamma * v1 + v0 * v1) * w1
        assert H == pytest.approx(expected, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            PhasePoint([1.0, 2.0], [1.0])
        with pytest.raises(ConfigError):
            wkb_hamiltonian(builtin("so3"), PhasePoint([1.0], [1.0]))


class TestField:
    def test_halfplane_component_equations(self, rng):
        gamma = 0.7
        m = halfplane_half_noise(gamma)
        for _ in range(20):
            v0, v1, w0, w1 = rng.uniform(-3, 3, 4)
            f = hamilton_field(m, PhasePoint([v0, v1], [w0, w1]))
            expected_v = [w0 - gamma * v0 - v1 ** 2, w1 - gamma * v1 + v0 * v1]
            expected_w = [gamma * w0 - v1 * w1, gamma * w1 + 2 * v1 * w0 - v0 * w1]
            assert np.max(np.abs(f.v - expected_v)) < 1e-12
            assert np.max(np.abs(f.w - expected_w)) < 1e-12

    def test_zero_momentum_relaxation(self, rng):
        m = general_model(rng)
        v = rng.standard_normal(3)
        f = hamilton_field(m, PhasePoint(v, np.zeros(3)))
        assert np.allclose(f.v, dissipative_drift(m, v)) and not np.any(f.w)

    @pytest.mark.parametrize("name", ["so3", "halfplane", "heisenberg", "abelian2"])
    def test_gradient_check(self, name, rng):
        n = builtin(name).dim
        m = builtin(name, G=random_psd(rng, n) + np.eye(n), Gamma=random_psd(rng, n), D=random_psd(rng, n))
        h = 1e-5
        for _ in range(20):
            v, w = rng.uniform(-2, 2, n), rng.uniform(-2, 2, n)
            f = hamilton_field(m, PhasePoint(v, w))

            def H(vv, ww):
                return float(wkb_hamiltonian(m, PhasePoint(vv, ww)))

            dHdw = [(H(v, w + h * e) - H(v, w - h * e)) / (2 * h) for e in np.eye(n)]
            dHdv = [(H(v + h * e, w) - H(v - h * e, w)) / (2 * h) for e in np.eye(n)]
            scale = 1.0 + np.max(np.abs(np.concatenate([f.v, f.w])))
            assert np.max(np.abs(f.v - dHdw)) < 1e-8 * scale
            assert np.max(np.abs(f.w + np.array(dHdv))) < 1e-8 * scale

    def test_central_differences_exact_for_quadratic_hamiltonian(self, rng):
        # H is quadratic in v and in w separately, so the O(h^2) error term of central
        # differences vanishes and even a coarse step reproduces the field to round-off
        m = general_model(rng)
        v, w = rng.standard_normal(3), rng.standard_normal(3)
        f = hamilton_field(m, PhasePoint(v, w))
        h = 0.5
        fd_v = [(float(wkb_hamiltonian(m, PhasePoint(v, w + h * e)))
                 - float(wkb_hamiltonian(m, PhasePoint(v, w - h * e)))) / (2 * h) for e in np.eye(3)]
        fd_w = [-(float(wkb_hamiltonian(m, PhasePoint(v + h * e, w)))
                  - float(wkb_hamiltonian(m, PhasePoint(v - h * e, w)))) / (2 * h) for e in np.eye(3)]
        assert np.allclose(fd_v, f.v, atol=1e-12) and np.allclose(fd_w, f.w, atol=1e-12)

    def test_batch(self, rng):
        m = general_model(rng)
        p = PhasePoint(rng.standard_normal((5, 3)), rng.standard_normal((5, 3)))
        f = hamilton_field(m, p)
        g = hamilton_field(m, PhasePoint(p.v[3], p.w[3]))
        assert np.allclose(f.v[3], g.v) and np.allclose(f.w[3], g.w)

    def test_compiled_solver_matches_reference(self, rng):
        m = general_model(rng)
        y0 = 0.3 * rng.standard_normal(6)
        times = time_grid(1.0, 1e-2)

        def rhs(y):
            f = hamilton_field(m, PhasePoint.unstack(y))
            return np.concatenate([f.v, f.w])

        assert np.allclose(hamilton_solve(m, y0, times), rk4_solve(rhs, y0, times), atol=1e-13, rtol=0)

    def test_compiled_solver_blow_up(self):
        m = builtin("abelian1", gamma=1.0, D=0.5)
        with pytest.raises(BlowUpError):
            hamilton_solve(m, np.array([0.0, 1.0]), time_grid(40.0, 1e-2), threshold=1e6)


class TestIntegrate:
    def test_zero_momentum_has_zero_action(self, rng):
        m = general_model(rng)
        path = integrate_instanton(m, PhasePoint(rng.standard_normal(3), np.zeros(3)), 2.0, 1e-2)
        assert np.all(path.partial_action == 0.0)

    # momenta grow like exp(gamma G t) along these paths, so the starting momenta are small
    @pytest.mark.parametrize("name, v, w", [("so3", [0.5, -0.3, 0.2], [1e-3, 2e-3, -1e-3]),
                                            ("halfplane", [0.2, 1.0], [1e-3, -1e-3]),
                                            ("heisenberg", [0.4, 0.1, -0.2], [1e-3, -1e-3, 2e-3]),
                                            ("abelian1", [1.0], [1e-3])])
    def test_hamiltonian_conserved(self, name, v, w):
        m = builtin(name, gamma=0.2, D=0.5)
        path = integrate_instanton(m, PhasePoint(v, w), 10.0, 1e-3)
        assert path.H_drift <= 1e-8

    def test_abelian_closed_form(self):
        m = builtin("abelian1", gamma=1.0, D=0.5)
        v0, w0 = 0.5, 1e-3
        path = integrate_instanton(m, PhasePoint([v0], [w0]), 5.0, 1e-3)
        t = path.times
        # dv/dt = w - v, dw/dt = w
        assert np.max(np.abs(path.w[:, 0] - w0 * np.exp(t))) < 1e-8
        assert np.max(np.abs(path.v[:, 0] - (v0 * np.exp(-t) + w0 * np.sinh(t)))) < 1e-8

    def test_action_is_additive(self):
        m = halfplane_half_noise()
        full = integrate_instanton(m, PhasePoint([0.1, 0.5], [0.05, 0.1]), 3.0, 1e-3)
        k = 1500
        head = full.partial_action[k]
        tail = integrate_instanton(m, PhasePoint(full.v[k], full.w[k]), 3.0 - full.times[k], 1e-3)
        assert head + tail.action == pytest.approx(full.action, abs=1e-10)


class TestAnsatz:
    @pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
    def test_fluctuation_path_is_exact(self, gamma, rng):
        m = halfplane_half_noise(gamma)
        for _ in range(10):
            v = rng.uniform(-2, 2, 2)
            assert ansatz_residual(m, v, beta=2 * gamma) < 1e-10

    def test_holds_for_general_metric(self, rng):
        G = random_psd(rng, 3) + np.eye(3)
        m = builtin("so3", G=G, Gamma=random_psd(rng, 3), beta=1.5)
        assert ansatz_residual(m, rng.standard_normal(3), 1.5) < 1e-10

    def test_fails_without_einstein_relation(self):
        m = builtin("halfplane", gamma=1.0, D=0.3)
        assert ansatz_residual(m, [0.4, 1.0], 2.0) > 1e-2

    def test_reduced_flow_is_sign_flipped_dissipation(self, rng):
        gamma = 0.8
        m = halfplane_half_noise(gamma)
        v = rng.uniform(-2, 2, (10, 2))
        f = hamilton_field(m, PhasePoint(v, 2 * gamma * v))
        expected = gamma * v + geodesic_drift(m, v)
        assert np.max(np.abs(f.v - expected)) < 1e-10

    def test_path_stays_on_ansatz(self):
        gamma = 1.0
        m = halfplane_half_noise(gamma)
        v0 = np.array([0.05, 0.1])
        path = integrate_instanton(m, PhasePoint(v0, 2 * gamma * v0), 1.5, 1e-3)
        assert np.max(np.abs(path.w - 2 * gamma * path.v)) < 1e-8
        reduced = quadratic_flow(m, v0, path.times, 1.0, 1.0)
        assert np.max(np.abs(path.v - reduced)) < 1e-8
        assert path.H_drift < 1e-12


class TestShoot:
    def test_rest_path(self, rng):
        m = general_model(rng)
        path = shoot(m, np.zeros(3), np.zeros(3), 2.0, 1e-2)
        assert np.all(path.w[0] == 0.0) and path.action == 0.0

    def test_abelian_action(self):
        m = builtin("abelian1", gamma=1.0, D=0.5)
        path = shoot(m, [0.0], [1.0], 20.0, 1e-3)
        assert abs(path.v[-1, 0] - 1.0) < 1e-8
        assert abs(path.action - 1.0) < 1e-3
        # closed form of the boundary-value problem
        assert path.w[0, 0] == pytest.approx(1.0 / math.sinh(20.0), rel=1e-6)
        assert path.action == pytest.approx(1.0 / (1.0 - math.exp(-40.0)), rel=1e-5)

    @pytest.mark.parametrize("v1", [2.0, 3.0])
    def test_halfplane_large_energy(self, v1):
        gamma = 1.0
        m = halfplane_half_noise(gamma)
        beta = 2 * gamma
        w0, _ = relaxation_guess(m, [0.0, v1], 10.0, 1e-3, beta)
        path = shoot(m, [0.0, 0.0], [0.0, v1], 10.0, 1e-3, w_guess=w0)
        assert np.linalg.norm(path.v[-1] - [0.0, v1]) < 1e-8
        assert path.action == pytest.approx(beta * 0.5 * v1 ** 2, rel=0.05)
        assert path.H_drift < 1e-8

    def test_multistart_falls_back(self):
        m = builtin("abelian1", gamma=1.0, D=0.5)
        path = shoot(m, [0.0], [1.0], 5.0, 1e-2, w_guess=[1e11], guesses=[[0.0]])
        assert path.info["start_index"] == 1

    def test_ties_go_to_lowest_index(self):
        m = builtin("abelian1", gamma=1.0, D=0.5)
        path = shoot(m, [0.0], [1.0], 5.0, 1e-2, w_guess=[1e11], guesses=[[0.1], [0.1]])
        assert path.info["start_index"] == 1

    def test_threads_do_not_change_result(self):
        m = halfplane_half_noise()
        kw = dict(w_guess=[1e11, 1e11], guesses=[[0.0, 0.5], [0.1, 0.1], [0.0, 0.0]])
        a = shoot(m, [0.0, 0.2], [0.0, 1.0], 3.0, 1e-2, threads=1, **kw)
        b = shoot(m, [0.0, 0.2], [0.0, 1.0], 3.0, 1e-2, threads=3, **kw)
        assert np.array_equal(a.w, b.w) and a.info == b.info

    def test_non_convergence(self):
        m = builtin("abelian1", gamma=1.0, D=0.5)
        with pytest.raises(ConvergenceError) as err:
            shoot(m, [0.0], [1.0], 5.0, 1e-2, max_iter=0)
        assert err.value.best == pytest.approx(1.0)

    @pytest.mark.parametrize("kw", [dict(v_end=[1.0, 2.0]), dict(T=0.0), dict(w_guess=[0.0, 1.0])])
    def test_rejects(self, kw):
        args = dict(v_start=[0.0], v_end=[1.0], T=1.0, dt=1e-2)
        args.update(kw)
        with pytest.raises(ConfigError):
            shoot(builtin("abelian1", gamma=1.0, D=0.5), **args)
