import math

import numpy as np
import pytest

from lab.runs import run_occupancy
from model.errors import DomainError
from model.laws import WeightLaw
from model.plans import plan_from_dict
from sim.occupancy import (
    SchemeConfig,
    allocate_box,
    count_rho,
    decompose_result,
    decompose_Y,
    pair_collision_probability,
    sample_heights,
    simulate_coupled,
    simulate_occupancy,
)

GEM1 = WeightLaw.gem(1.0)


def _mean_and_se(values):
    arr = np.asarray(values, dtype=float)
    return arr.mean(), arr.std(ddof=1) / math.sqrt(arr.size)


class TestSchemeConfig:
    def test_invalid(self):
        for n, j in ((0, 3), (2.5, 3), (4, 0)):
            with pytest.raises(DomainError):
                SchemeConfig(n, j, GEM1)

    def test_single_ball(self):
        profile = simulate_occupancy(SchemeConfig(1, 4, GEM1, seed=1))
        assert profile.counts == (1, 1, 1, 1)
        assert profile.height is None
        with pytest.raises(DomainError):
            profile.K(5)


class TestSimulateOccupancy:
    def test_first_level_mean_is_harmonic(self):
        cfg = SchemeConfig(10, 1, GEM1, seed=2024)
        mean, se = _mean_and_se([simulate_occupancy(cfg, r).K(1) for r in range(2000)])
        harmonic = sum(1.0 / k for k in range(1, 11))
        assert abs(mean - harmonic) < 4 * se

    def test_counts_bounded_by_balls(self):
        profile = simulate_occupancy(SchemeConfig(30, 8, GEM1, seed=5))
        assert all(1 <= k <= 30 for k in profile.counts)
        assert list(profile.counts) == sorted(profile.counts)

    def test_reproducible(self):
        cfg = SchemeConfig(25, 5, GEM1, seed=8)
        assert simulate_occupancy(cfg, 3) == simulate_occupancy(cfg, 3)


class TestCountRho:
    def test_mean_is_log_t(self):
        cfg = SchemeConfig(1, 1, GEM1, seed=31)
        mean, se = _mean_and_se([count_rho(cfg, math.exp(3.0), r).rho(1) for r in range(2000)])
        assert abs(mean - 3.0) < 4 * se

    def test_threshold_below_one(self):
        with pytest.raises(DomainError):
            count_rho(SchemeConfig(1, 1, GEM1), 0.5)


class TestCoupled:
    def test_decomposition_sums(self, gem1_grids):
        cfg = SchemeConfig(50, 3, GEM1, seed=17)
        for r in range(5):
            result = simulate_coupled(cfg, replicate=r)
            for j in (1, 2, 3):
                dec = decompose_result(result, j, gem1_grids.levels)
                assert sum(dec.as_tuple()) == pytest.approx(dec.K - dec.centering)
                assert dec.centering == pytest.approx(math.log(50.0) ** j / math.factorial(j), rel=1e-3)

    def test_first_level_matches_weights_only_count(self):
        cfg = SchemeConfig(40, 2, GEM1, seed=23)
        for r in range(5):
            coupled = simulate_coupled(cfg, 40.0, r)
            alone = count_rho(cfg, 40.0, r)
            np.testing.assert_allclose(coupled.first_level, alone.first_level)
            assert coupled.rho.rho(1) == alone.rho(1)

    def test_decompose_y_level_range(self, gem1_grids):
        cfg = SchemeConfig(20, 2, GEM1, seed=3)
        assert len(decompose_Y(cfg, 2, gem1_grids.levels)) == 3
        with pytest.raises(DomainError):
            decompose_Y(cfg, 3, gem1_grids.levels)


class TestSmallPieces:
    def test_pair_collision(self):
        assert pair_collision_probability(GEM1) == pytest.approx(0.5)

    def test_two_ball_height(self):
        sample = sample_heights(GEM1, 2, 2000, seed=12, j_max=60)
        summary = sample.summary()
        assert summary["exceeded"] == 0
        # height is geometric with success 1/2: mean 2, variance 2
        assert abs(summary["mean_height"] - 2.0) < 4 * math.sqrt(2.0 / 2000)

    def test_allocate_box(self):
        children = allocate_box(7, GEM1, np.random.default_rng(0))
        assert sum(k for _, k, _ in children) == 7
        idx = [r for r, _, _ in children]
        assert idx == sorted(set(idx)) and idx[0] >= 1
        assert all(0.0 < w < 1.0 for _, _, w in children)
        with pytest.raises(DomainError):
            allocate_box(0, GEM1, np.random.default_rng(0))


class TestInvariants:
    def test_ball_conservation_per_level(self):
        for n, seed in ((1, 1), (2, 2), (37, 3), (500, 4)):
            result = simulate_coupled(SchemeConfig(n, 5, GEM1, seed=seed))
            assert result.level_balls == (n,) * 5

    def test_half_atom_threshold_count(self):
        # sticks 1/2, 1/4, 1/8 reach the threshold 1/8
        cfg = SchemeConfig(1, 1, WeightLaw.point_masses([(0.5, 1.0)]), seed=9)
        assert count_rho(cfg, 8.0).rho(1) == 3
        assert count_rho(cfg, 1.0).rho(1) == 0

    def test_half_atom_two_balls_share_first_child(self):
        law = WeightLaw.point_masses([(0.5, 1.0)])
        rng = np.random.default_rng(44)
        runs = 4000
        both_first = sum(allocate_box(2, law, rng) == [(1, 2, 0.5)] for _ in range(runs))
        assert abs(both_first / runs - 0.25) < 4 * math.sqrt(0.25 * 0.75 / runs)


class TestOccupancyReport:
    def test_y3_variance_dominates(self):
        plan = plan_from_dict({"law": {"kind": "gem", "theta": 1.0}, "n": 10**6, "j_max": 2,
                               "replicates": 600, "seed": 5, "h": 0.01}, "occupancy")
        level = run_occupancy(plan).report["levels"][1]
        assert level["var_Y3"] > level["var_Y2"] > 0
        assert level["var_Y3"] > level["var_Y1"]
        assert level["y3_dominance"] == pytest.approx(level["var_Y3"] / max(level["var_Y1"], level["var_Y2"]))
        assert level["y3_dominance"] > 5.0 and level["y3_dominates"]

    def test_single_replicate_has_no_variances(self):
        plan = plan_from_dict({"law": {"kind": "gem", "theta": 1.0}, "n": 20, "j_max": 1,
                               "replicates": 1, "h": 0.01}, "occupancy")
        level = run_occupancy(plan).report["levels"][0]
        assert level["var_Y3"] is None and level["y3_dominates"] is None
