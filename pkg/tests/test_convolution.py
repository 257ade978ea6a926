import math

import numpy as np
import pytest

from model.errors import DomainError, GridMismatch, GridTooShort, NonCommensurableGrid, OverflowRisk
from model.grid import BoundReport, GridFunction
from model.laws import Marginal, StepLaw
from renewal.convolution import (
    build_G,
    build_U,
    build_V,
    build_Vj,
    build_renewal_grids,
    centering,
    convolve_stieltjes,
    distribution_grid,
    grid_size,
    guard_overflow,
    stieltjes_sum,
)


class TestGridFunction:
    def test_evaluation(self):
        g = GridFunction(0.5, [0.0, 1.0, 2.0, 3.0])
        assert g(-0.1) == 0.0
        assert g(0.75) == pytest.approx(1.5)
        np.testing.assert_allclose(g(np.array([0.0, 1.5])), [0.0, 3.0])
        with pytest.raises(GridTooShort):
            g(1.6)

    def test_atomic_is_right_continuous(self):
        g = GridFunction(1.0, [1.0, 2.0, 3.0], atomic=True)
        assert g(0.99) == 1.0
        assert g(1.0) == 2.0

    def test_rejects_bad_values(self):
        for values in ([0.0, 2.0, 1.0], [0.0, math.nan], [1.0]):
            with pytest.raises(DomainError):
                GridFunction(1.0, values)

    def test_compatibility(self):
        a = GridFunction(0.5, np.arange(4.0))
        with pytest.raises(GridMismatch):
            a.check_compatible(GridFunction(0.25, np.arange(4.0)))

    def test_integrate(self):
        g = GridFunction(1.0, [0.0, 1.0, 1.0, 3.0], atomic=True)
        # jumps of 1 at t=1 and 2 at t=3
        assert g.integrate(lambda y: y, 0.0, 3.0) == pytest.approx(1.0 + 6.0)
        assert g.integrate(lambda y: y, 1.0, 3.0) == pytest.approx(6.0)
        assert g.integrate(lambda y: y, 1.0, 3.0, include_lower=True) == pytest.approx(7.0)


class TestBoundReport:
    def test_from_slack_picks_closest_point(self):
        rep = BoundReport.from_slack("x", np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.2, 0.5]), 0.0)
        assert rep.holds and rep.arg_max == 1.0 and rep.max_slack == pytest.approx(0.2)

    def test_violation_within_tolerance(self):
        rep = BoundReport.from_slack("x", np.array([0.0, 1.0]), np.array([-1e-6, 1.0]), np.array([1e-5, 0.0]))
        assert rep.holds
        rep = BoundReport.from_slack("x", np.array([0.0, 1.0]), np.array([-1e-4, 1.0]), 1e-5)
        assert not rep.holds


class TestStieltjesSum:
    def test_unit_atom_at_zero_is_identity(self):
        K = GridFunction.constant(1.0, 0.1, 11)
        f = np.linspace(0.0, 1.0, 11)
        np.testing.assert_allclose(stieltjes_sum(f, K), f)

    def test_linear_against_uniform_mass(self):
        h = 0.01
        t = h * np.arange(301)
        K = GridFunction(h, t)
        # ∫_0^t (t - y) dy = t^2 / 2, exact for linear f under the midpoint rule
        np.testing.assert_allclose(stieltjes_sum(t, K), t**2 / 2, atol=1e-10)

    def test_result_monotone(self):
        h = 0.05
        t = h * np.arange(200)
        F = GridFunction(h, 1.0 - np.exp(-t))
        out = convolve_stieltjes(F, F)
        assert np.all(np.diff(out.values) >= 0)
        # Gamma(2, 1) distribution function
        np.testing.assert_allclose(out.values, 1.0 - np.exp(-t) * (1.0 + t), atol=2e-3)


class TestDistributionGrid:
    def test_lattice_atoms_on_nodes(self):
        g = distribution_grid(None, (np.array([1.0, 2.0]), np.array([0.25, 0.75])), 0.5, 3.0)
        np.testing.assert_allclose(g.values, [0, 0, 0.25, 0.25, 1, 1, 1])
        assert g.atomic

    def test_non_commensurable(self):
        with pytest.raises(NonCommensurableGrid):
            distribution_grid(None, (np.array([1.0]), np.array([1.0])), 0.3, 3.0)

    def test_grid_size(self):
        assert grid_size(0.1, 1.0) == 11
        with pytest.raises(DomainError):
            grid_size(0.0, 1.0)


class TestBuildU:
    def test_closed_form_gem1(self, gem1):
        U = build_U(gem1, 1e-2, 10.0)
        np.testing.assert_allclose(U.values, 1.0 + U.nodes)
        assert U.method == "closed-form"

    def test_series_matches_closed_form(self):
        law = StepLaw.independent(Marginal.exponential(1.0), Marginal.exponential(1.0))
        U = build_U(law, 1e-2, 5.0, method="series")
        np.testing.assert_allclose(U.values, 1.0 + U.nodes, atol=1e-2)

    def test_gamma_renewal_function(self):
        law = StepLaw.independent(Marginal.gamma(2.0, 1.0), Marginal.exponential(1.0))
        U = build_U(law, 1e-2, 8.0)
        t = U.nodes
        np.testing.assert_allclose(U.values, 1.0 + t / 2 - (1.0 - np.exp(-2 * t)) / 4, atol=5e-3)

    def test_lattice_is_floor_plus_one(self, lattice):
        U = build_U(lattice, 0.5, 6.0)
        np.testing.assert_allclose(U.values, np.floor(U.nodes) + 1.0, atol=1e-12)
        with pytest.raises(DomainError):
            build_U(lattice, 0.5, 6.0, method="closed")


class TestBuildV:
    def test_gem1_is_identity(self, gem1):
        U = build_U(gem1, 1e-3, 10.0)
        V = build_V(U, build_G(gem1, 1e-3, 10.0))
        np.testing.assert_allclose(V.values, V.nodes, atol=1e-4)
        assert V(0.0) == 0.0

    def test_lattice_is_floor(self, lattice_grids):
        V = lattice_grids.V
        np.testing.assert_allclose(V.values, np.floor(V.nodes), atol=1e-12)


class TestBuildLevels:
    def test_gem1_powers(self, gem1_grids):
        t = gem1_grids.U.nodes
        for j in (2, 3):
            np.testing.assert_allclose(gem1_grids.level(j).values, t**j / math.factorial(j), rtol=1e-3, atol=1e-6)
        np.testing.assert_array_equal(gem1_grids.level(0).values, 1.0)

    def test_lattice_binomials(self, lattice_grids):
        nodes = lattice_grids.U.nodes
        for j in range(1, 5):
            expected = [math.comb(int(math.floor(x)), j) for x in nodes]
            np.testing.assert_allclose(lattice_grids.level(j).values, expected, atol=1e-9)

    def test_build_vj_matches_levels(self, lattice_grids):
        np.testing.assert_allclose(build_Vj(lattice_grids.V, 3).values, lattice_grids.level(3).values)

    def test_level_out_of_range(self, lattice_grids):
        with pytest.raises(DomainError):
            lattice_grids.level(9)

    def test_overflow_guard(self):
        with pytest.raises(OverflowRisk):
            guard_overflow(1e4, 200)
        guard_overflow(50.0, 8)


class TestCentering:
    def test_gem1(self, gem1_grids):
        assert centering(math.exp(3.0), 1, gem1_grids) == pytest.approx(3.0, abs=1e-3)
        assert centering(math.exp(3.0), 2, gem1_grids) == pytest.approx(4.5, abs=1e-2)
        with pytest.raises(DomainError):
            centering(0.5, 1, gem1_grids)

    def test_grid_horizon(self, gem1):
        grids = build_renewal_grids(gem1, 0.1, 2.0, 1)
        with pytest.raises(GridTooShort):
            centering(math.exp(3.0), 1, grids)
