import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import eulerarnold.fpk as fpk
from eulerarnold.errors import ConfigError, ConvergenceError, MassDriftError, StabilityError
from eulerarnold.fpk import (DensityField, FPKOperator, Grid, _clip, closed_form_field, fpk_evolve,
                             fpk_rhs, gaussian_field, halfplane_exact_stationary, maxwell_boltzmann,
                             solve_stationary, stationary_distance_report, uniform_field)
from eulerarnold.models import builtin


def exact_bracket(x):
    """High-precision reference for 1 - exp(-x^2/4) erf(x/2) / x."""
    x = mpmath.mpf(x)
    with mpmath.workdps(50):
        return float(1 - mpmath.exp(-x ** 2 / 4) * mpmath.erf(x / 2) / x)


HP_GRID = Grid((-4.0, 0.05), (4.0, 4.0), (24, 24))


class TestGrid:
    def test_parse_roundtrip(self):
        g = Grid.parse("-4:4:16,0.05:4:12")
        assert g.cells == (16, 12) and g.lower == (-4.0, 0.05)
        assert Grid.parse(g.spec()) == g

    def test_geometry(self):
        g = Grid((0.0,), (1.0,), (10,))
        assert np.allclose(g.axes()[0], np.arange(10) / 10 + 0.05)
        assert g.cell_volume == pytest.approx(0.1)
        assert g.points().shape == (10, 1)
        assert g.face_points(0).shape == (9, 1)

    @pytest.mark.parametrize("text", ["0:1", "1:0:10", "0:1:4", "a:b:c"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            Grid.parse(text)

    def test_singular_measure(self):
        with pytest.raises(ConfigError, match="singularity"):
            uniform_field(builtin("halfplane"), Grid((-1.0, 0.0), (1.0, 1.0), (8, 8)))

    def test_dimension(self):
        with pytest.raises(ConfigError):
            uniform_field(builtin("so3"), Grid((-1.0,), (1.0,), (8,)))


class TestRhs:
    def test_constant_field_without_drift(self):
        m = builtin("abelian2", D=[[1.0, 0.2], [0.2, 0.5]])
        g = Grid((-1.0, -1.0), (1.0, 1.0), (10, 12))
        field = DensityField(g, np.full(g.cells, 3.0), np.ones(g.cells))
        assert np.max(np.abs(fpk_rhs(m, field))) < 1e-13

    def test_constant_field_halfplane_measure(self):
        m = builtin("halfplane", D=0.7)
        field = uniform_field(m, HP_GRID)
        field.P[:] = 1.0
        assert np.max(np.abs(fpk_rhs(m, field, hamiltonian_drift=False))) < 1e-12

    @pytest.mark.parametrize("hamiltonian", [True, False])
    def test_discrete_mass_conserved(self, hamiltonian, rng):
        m = builtin("halfplane", Gamma=[[1.0, 0.3], [0.3, 0.8]], D=[[0.5, 0.1], [0.1, 0.4]])
        P = rng.random(HP_GRID.cells)
        op = FPKOperator(m, HP_GRID, hamiltonian)
        r = op.rhs(P)
        total = float(np.sum(op.mu_cells * r)) * HP_GRID.cell_volume
        assert abs(total) < 1e-12 * float(np.sum(np.abs(op.mu_cells * r))) * HP_GRID.cell_volume

    def test_matrix_matches_rhs(self, rng):
        m = builtin("halfplane", gamma=1.0, D=[[0.5, 0.1], [0.1, 0.4]])
        op = FPKOperator(m, HP_GRID)
        P = rng.random(HP_GRID.cells)
        assert np.allclose(op.matrix() @ P.ravel(), op.rhs(P).ravel(), rtol=1e-12, atol=1e-12)

    def test_maxwell_boltzmann_residual_second_order(self):
        m = builtin("abelian1", gamma=1.0, beta=1.0)
        res = []
        for cells in (64, 128, 256):
            g = Grid((-8.0,), (8.0,), (cells,))
            res.append(np.max(np.abs(fpk_rhs(m, maxwell_boltzmann(m, g, 1.0)))))
        assert 3.5 < res[0] / res[1] < 4.5 and 3.5 < res[1] / res[2] < 4.5

    @pytest.mark.parametrize("hamiltonian", [True, False])
    def test_halfplane_maxwell_boltzmann_second_order(self, hamiltonian):
        # with the measure correction, exp(-beta E) is stationary for the half-plane as well;
        # cells next to the reflecting walls are excluded because the wall truncates the flux
        m = builtin("halfplane", gamma=1.0, beta=1.0)
        res = []
        for cells in (32, 64, 128):
            g = Grid((-3.0, 0.5), (3.0, 3.5), (cells, cells))
            field = maxwell_boltzmann(m, g, 1.0)
            r = np.abs(fpk_rhs(m, field, hamiltonian))[2:-2, 2:-2]
            res.append(np.max(r) / np.max(field.P))
        assert 3.3 < res[0] / res[1] < 4.3 and 3.5 < res[1] / res[2] < 4.3

    def test_rejects_bad_measure_on_grid(self):
        with pytest.raises(ConfigError):
            FPKOperator(builtin("halfplane"), Grid((-1.0, -1.0), (1.0, -0.1), (8, 8)))


class TestEvolve:
    def test_abelian_converges_to_maxwell_boltzmann(self):
        m = builtin("abelian1", gamma=1.0, beta=1.0)
        g = Grid((-8.0,), (8.0,), (256,))
        field, info = fpk_evolve(m, uniform_field(m, g), 15.0)
        assert field.l1_distance(maxwell_boltzmann(m, g, 1.0)) < 1e-3
        assert info.clipped_mass == 0.0

    def test_no_drift_no_noise_is_stationary(self):
        m = builtin("abelian1")
        g = Grid((-2.0,), (2.0,), (16,))
        start = gaussian_field(m, g, [0.3], 0.5)
        field, _ = fpk_evolve(m, start, 1.0, dt=0.1)
        assert np.array_equal(field.P, start.P)

    def test_mass_conservation_over_many_steps(self):
        m = builtin("halfplane", gamma=1.0, beta=1.0)
        start = gaussian_field(m, HP_GRID, [-1.0, 2.0], 0.5)
        op = FPKOperator(m, HP_GRID)
        dt = op.stable_dt()
        field, info = fpk_evolve(m, start, 10_000 * dt, dt=dt, operator=op)
        assert info.steps == 10_000
        assert abs(field.mass() - start.mass()) / start.mass() < 1e-10
        assert info.max_mass_drift < 1e-10

    def test_refuses_unstable_step(self):
        m = builtin("abelian1", gamma=1.0, beta=1.0)
        g = Grid((-4.0,), (4.0,), (32,))
        bound = FPKOperator(m, g).stable_dt()
        with pytest.raises(StabilityError):
            fpk_evolve(m, uniform_field(m, g), 1.0, dt=1.01 * bound)

    def test_mass_drift_abort(self, monkeypatch):
        monkeypatch.setattr(fpk, "MASS_TOL", -1.0)
        m = builtin("abelian1", gamma=1.0, beta=1.0)
        g = Grid((-4.0,), (4.0,), (32,))
        with pytest.raises(MassDriftError):
            fpk_evolve(m, uniform_field(m, g), 0.1)

    def test_non_convergence(self):
        m = builtin("abelian1", gamma=1.0, beta=1.0)
        g = Grid((-4.0,), (4.0,), (32,))
        with pytest.raises(ConvergenceError):
            solve_stationary(m, uniform_field(m, g), max_steps=10)

    def test_clip_keeps_mass(self):
        P = np.array([1.0, -0.2, 0.5, 0.7])
        mu = np.array([1.0, 2.0, 1.0, 0.5])
        mass = float(mu @ P) * 0.1
        out, clipped = _clip(P, mu, 0.1, mass)
        assert np.all(out >= 0) and clipped == pytest.approx(0.04)
        assert float(mu @ out) * 0.1 == pytest.approx(mass, rel=1e-14)

    def test_finite_time_lands_on_time(self):
        m = builtin("abelian1", gamma=1.0, beta=1.0)
        g = Grid((-4.0,), (4.0,), (32,))
        _, info = fpk_evolve(m, uniform_field(m, g), 1.0)
        assert info.time == pytest.approx(1.0, rel=1e-12)

    def test_halfplane_linear_drift_stationary_is_maxwell_boltzmann(self):
        m = builtin("halfplane", gamma=1.0, beta=1.0)
        g = Grid((-4.0, 0.05), (4.0, 4.0), (32, 32))
        field, info = solve_stationary(m, uniform_field(m, g), hamiltonian_drift=False)
        assert info.converged
        assert field.l1_distance(maxwell_boltzmann(m, g, 1.0)) < 2e-2


class TestClosedForm:
    def test_large_rho(self):
        value = halfplane_exact_stationary(0.0, 3.0, 1.0)
        lead = math.exp(-4.5) / 3.0
        assert lead == pytest.approx(0.003702, abs=1e-6)
        assert 0.96 * lead < value < lead

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(0.1, 5))
    def test_even_in_v0(self, v0, v1, beta):
        assert halfplane_exact_stationary(v0, v1, beta) == halfplane_exact_stationary(-v0, v1, beta)

    @pytest.mark.parametrize("x", [1e-6, 1e-4, 9e-4, 1.1e-3, 0.01, 0.5, 2.0, 10.0])
    def test_bracket_matches_high_precision(self, x):
        # along v0 = 0 the density is bracket / v1 * exp(-beta v1^2 / 2)
        v1 = x
        value = halfplane_exact_stationary(0.0, v1, 1.0)
        expected = exact_bracket(x) / v1 * math.exp(-0.5 * v1 ** 2)
        assert value == pytest.approx(expected, rel=1e-9)

    def test_small_rho_limit(self):
        limit = 1.0 - 1.0 / math.sqrt(math.pi)
        assert limit == pytest.approx(0.4358104, abs=1e-7)
        v1 = 1e-8
        assert halfplane_exact_stationary(0.0, v1, 1.0) * v1 == pytest.approx(limit, rel=1e-12)

    def test_series_switch_is_continuous(self):
        below = halfplane_exact_stationary(0.0, 1e-3 * (1 - 1e-9), 1.0)
        above = halfplane_exact_stationary(0.0, 1e-3 * (1 + 1e-9), 1.0)
        assert below == pytest.approx(above, rel=1e-8)

    def test_rejects(self):
        with pytest.raises(ConfigError):
            halfplane_exact_stationary(0.0, 0.0, 1.0)
        with pytest.raises(ConfigError):
            halfplane_exact_stationary(0.0, 1.0, 0.0)

    def test_closed_form_is_not_stationary(self):
        # the grid operator leaves Maxwell-Boltzmann stationary to discretisation error
        # but not the closed form
        m = builtin("halfplane", gamma=1.0, beta=1.0)
        op = FPKOperator(m, HP_GRID, hamiltonian_drift=False)
        cf, mb = closed_form_field(m, HP_GRID, 1.0), maxwell_boltzmann(m, HP_GRID, 1.0)
        r_cf = np.max(np.abs(op.rhs(cf.P))) / np.max(cf.P)
        r_mb = np.max(np.abs(op.rhs(mb.P))) / np.max(mb.P)
        assert r_cf > 100 * r_mb


class TestReport:
    def test_small_grid_report(self, tmp_path):
        m = builtin("halfplane", gamma=1.0, beta=1.0)
        g = Grid((-4.0, 0.05), (4.0, 4.0), (24, 24))
        archive = tmp_path / "discrepancy.json"
        report = stationary_distance_report(m, g, 1.0, archive_path=archive, eps_values=(0.1,))
        assert report.double_run_l1 <= 1e-4
        assert report.mass_drift < 1e-8
        assert report.control_l1 > 0.1
        assert set(report.modes) >= {"density_marginal_v1", "P_marginal_v1", "density_peak_v1"}
        assert "0.1" in report.eps_sensitivity
        if not report.within_target:
            stored = json.loads(archive.read_text())
            assert stored["kind"] == "closed_form_discrepancy"
            assert stored["l1_closed_form"] == pytest.approx(report.l1_closed_form)
        lines = report.as_lines()
        assert any(line.startswith("l1_closed_form=") for line in lines)
        assert all("=" in line for line in lines)

    def test_requires_halfplane_and_einstein(self):
        with pytest.raises(ConfigError):
            stationary_distance_report(builtin("abelian2", gamma=1.0, beta=1.0),
                                       Grid((-1, -1), (1, 1), (8, 8)), 1.0)
        with pytest.raises(ConfigError):
            stationary_distance_report(builtin("halfplane", gamma=1.0, D=2.0), HP_GRID, 1.0)
