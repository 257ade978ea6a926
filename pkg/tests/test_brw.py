import math

import numpy as np
import pytest

from model.errors import BudgetExceeded, DomainError
from model.laws import Marginal, StepLaw
from renewal.variance import VarianceProfile, variance_profile
from sim.brw import conditional_mean, sample_prw, simulate_brw, theorem31_statistic, variance_recursion_check
from sim.streams import replicate_rng


def _mean_and_se(values):
    arr = np.asarray(values, dtype=float)
    return arr.mean(), arr.std(ddof=1) / math.sqrt(arr.size)


class TestSamplePrw:
    def test_lattice_path(self, lattice):
        path = sample_prw(lattice, 3.5, np.random.default_rng(0))
        np.testing.assert_array_equal(path.T, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(path.S, [0.0, 1.0, 2.0])
        assert path.walk_tail == 4.0
        assert path.count_at(2.0) == 2
        with pytest.raises(DomainError):
            path.count_at(4.0)

    def test_gem1_mean(self, gem1):
        mean, se = _mean_and_se([sample_prw(gem1, 5.0, replicate_rng(1, r)).count for r in range(2000)])
        assert abs(mean - 5.0) < 4 * se

    def test_negative_horizon(self, gem1):
        with pytest.raises(DomainError):
            sample_prw(gem1, -1.0, np.random.default_rng(0))


class TestSimulateBrw:
    def test_lattice_exact(self, lattice):
        sample = simulate_brw(lattice, 2, 3.5, np.random.default_rng(0), keep_positions=True)
        assert sample.value == math.comb(3, 2)
        np.testing.assert_array_equal(sample.breakdown, [2, 1, 0])
        assert sample.count_at(2.5) == 1

    def test_gem1_second_level_mean(self, gem1):
        values = [simulate_brw(gem1, 2, 3.0, replicate_rng(2, r)).value for r in range(2000)]
        mean, se = _mean_and_se(values)
        assert abs(mean - 4.5) < 4 * se

    def test_breakdown_sums_to_value(self, gem1):
        sample = simulate_brw(gem1, 3, 4.0, np.random.default_rng(5))
        assert sample.breakdown.sum() == sample.value
        assert sample.breakdown.size == sample.first_generation.size

    def test_budget(self, gem1):
        with pytest.raises(BudgetExceeded):
            simulate_brw(gem1, 3, 10.0, np.random.default_rng(1), budget=10)

    def test_errors(self, gem1):
        with pytest.raises(DomainError):
            simulate_brw(gem1, 0, 1.0, np.random.default_rng(0))
        sample = simulate_brw(gem1, 1, 2.0, np.random.default_rng(0))
        with pytest.raises(DomainError):
            sample.count_at(1.0)


class TestStatistics:
    def test_conditional_mean(self, lattice_grids):
        assert conditional_mean(np.empty(0), 3.0, lattice_grids.level(1)) == 0.0
        # V(3.5 - r) = floor(3.5 - r) for r = 1, 2, 3
        assert conditional_mean(np.array([1.0, 2.0, 3.0]), 3.5, lattice_grids.level(1)) == pytest.approx(3.0)

    def test_lattice_statistic_is_zero(self, lattice, lattice_grids):
        assert theorem31_statistic(lattice, 2, 3.5, 1.0, np.random.default_rng(0), lattice_grids.levels) == 0.0
        with pytest.raises(DomainError):
            theorem31_statistic(lattice, 2, 3.5, 0.1, np.random.default_rng(0), lattice_grids.levels)

    def test_variance_recursion(self, gem1, gem1_grids):
        profile = variance_profile(gem1_grids, 2)
        check = variance_recursion_check(gem1, 2, 3.0, 77, gem1_grids, 3000, profile)
        assert abs(check.z) < 4.0
        assert math.isfinite(check.D_exact) and check.D_exact > 0
        assert check.lhs == pytest.approx(check.D_exact, rel=0.25)

    def test_variance_recursion_uses_grid_convolution(self, gem1, gem1_grids):
        profile = variance_profile(gem1_grids, 2)
        doubled = VarianceProfile(tuple(2 * a for a in profile.I), tuple(2 * a for a in profile.D), profile.step)
        good = variance_recursion_check(gem1, 2, 8.0, 78, gem1_grids, 3000, profile)
        bad = variance_recursion_check(gem1, 2, 8.0, 78, gem1_grids, 3000, doubled)
        assert abs(good.z) < 4.0
        assert bad.convolution_grid == pytest.approx(2 * good.convolution_grid)
        assert bad.z < -10.0

    def test_lattice_recursion_is_exact(self, lattice, lattice_grids):
        check = variance_recursion_check(lattice, 2, 3.5, 1, lattice_grids, 5, variance_profile(lattice_grids, 2))
        assert check.lhs == pytest.approx(0.0, abs=1e-12)
        assert check.z == 0.0

    def test_variance_recursion_arguments(self, gem1, gem1_grids):
        with pytest.raises(DomainError):
            variance_recursion_check(gem1, 1, 3.0, 1, gem1_grids, 10, None)
        with pytest.raises(DomainError):
            variance_recursion_check(gem1, 2, 3.0, 1, gem1_grids, 1, variance_profile(gem1_grids, 2))
        with pytest.raises(DomainError):
            variance_recursion_check(gem1, 2, 3.0, 1, gem1_grids, 10, None)
        with pytest.raises(DomainError):
            variance_recursion_check(gem1, 3, 3.0, 1, gem1_grids, 10, variance_profile(gem1_grids, 2))


class TestPathInvariants:
    def test_counts_monotone_over_coupled_horizons(self, gem1):
        horizons = np.linspace(0.0, 6.0, 25)
        for r in range(20):
            sample = simulate_brw(gem1, 3, 6.0, replicate_rng(9, r), keep_positions=True)
            counts = [sample.count_at(s) for s in horizons]
            assert all(a <= b for a, b in zip(counts, counts[1:]))
            assert counts[-1] == sample.value
            path = sample_prw(gem1, 6.0, replicate_rng(10, r))
            firsts = [path.count_at(s) for s in horizons]
            assert all(a <= b for a, b in zip(firsts, firsts[1:]))

    def test_lattice_tree_counts(self, lattice):
        for t in np.arange(0.0, 6.01, 0.5):
            for j in (1, 2, 3):
                sample = simulate_brw(lattice, j, float(t), np.random.default_rng(0))
                assert sample.value == math.comb(int(math.floor(t)), j)

    def test_atom_steps_stay_on_lattice(self):
        law = StepLaw.independent(Marginal.point_masses([(0.5, 0.3), (1.5, 0.7)]),
                                  Marginal.point_masses([(0.25, 0.5), (0.75, 0.5)]))
        for r in range(10):
            path = sample_prw(law, 30.0, replicate_rng(3, r))
            np.testing.assert_allclose(path.S / 0.5, np.round(path.S / 0.5), atol=1e-9)
            np.testing.assert_allclose((path.T - 0.25) / 0.5, np.round((path.T - 0.25) / 0.5), atol=1e-9)
            assert path.count > 0
