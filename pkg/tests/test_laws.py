import math

import numpy as np
import pytest

from model.errors import LawInvalid
from model.laws import Marginal, StepLaw, WeightLaw, compute_moments, law_from_dict, sample_step


class TestWeightLaw:
    def test_gem_sample_mean(self):
        rng = np.random.default_rng(1)
        w = WeightLaw.gem(2.0).sample(rng, 20_000)
        # E W = theta / (theta + 1), Var W = theta / ((theta + 1)^2 (theta + 2))
        se = math.sqrt(2.0 / (9.0 * 4.0) / w.size)
        assert abs(w.mean() - 2.0 / 3.0) < 4 * se
        assert np.all((w > 0) & (w < 1))

    def test_cdf_inverts_ppf(self):
        for law in (WeightLaw.gem(0.5), WeightLaw.beta(2.0, 3.0)):
            q = np.linspace(0.05, 0.95, 7)
            np.testing.assert_allclose(law.cdf(law.ppf(q)), q, rtol=1e-9)

    def test_mean_powers(self):
        law = WeightLaw.gem(1.0)
        assert law.mean_power(2.0) == pytest.approx(1.0 / 3.0)
        assert law.mean_complement_power(1.0) == pytest.approx(0.5)
        atoms = WeightLaw.point_masses([(0.5, 1.0)])
        assert atoms.mean_power(3.0) == pytest.approx(0.125)

    def test_atoms_validated(self):
        with pytest.raises(LawInvalid):
            WeightLaw.point_masses([(1.0, 1.0)])
        with pytest.raises(LawInvalid):
            WeightLaw.point_masses([(0.3, 0.5), (0.6, 0.4)])
        with pytest.raises(LawInvalid):
            WeightLaw.gem(-1.0)

    def test_single_atom_sample(self):
        law = WeightLaw.point_masses([(0.25, 1.0)])
        np.testing.assert_array_equal(law.sample(np.random.default_rng(0), 4), np.full(4, 0.25))


class TestStepLaw:
    def test_derived_pair(self, gem1):
        xi, eta = sample_step(gem1, np.random.default_rng(3))
        # xi = -log W, eta = -log(1 - W) from the same W
        assert math.exp(-xi) + math.exp(-eta) == pytest.approx(1.0)

    def test_needs_one_form(self):
        with pytest.raises(LawInvalid):
            StepLaw()
        with pytest.raises(LawInvalid):
            StepLaw(weight=WeightLaw.gem(1.0), xi=Marginal.exponential(1.0))

    def test_joint_nodes(self, gem1, lattice):
        xi, eta, p = gem1.joint_nodes(1000)
        assert p.sum() == pytest.approx(1.0)
        assert np.sum(p * xi) == pytest.approx(1.0, abs=1e-2)
        np.testing.assert_allclose(np.exp(-xi) + np.exp(-eta), 1.0)
        with pytest.raises(LawInvalid):
            lattice.joint_nodes(10)

    def test_laplace(self, gem1, exp_law):
        assert gem1.laplace_xi(1.0) == pytest.approx(0.5)
        assert exp_law.laplace_eta(1.0) == pytest.approx(0.8)

    def test_exponential_moment_radius(self, gem2, exp_law, lattice):
        assert gem2.exponential_moment_radius == 1.0
        assert StepLaw.derived(WeightLaw.gem(0.5)).exponential_moment_radius == 0.5
        assert StepLaw.derived(WeightLaw.beta(2.0, 3.0)).exponential_moment_radius == 2.0
        assert StepLaw.derived(WeightLaw.point_masses([(0.5, 1.0)])).exponential_moment_radius == math.inf
        assert exp_law.exponential_moment_radius == 1.0
        assert lattice.exponential_moment_radius == math.inf

    def test_labels(self, gem1, lattice):
        assert gem1.label == "GEM(1)"
        assert lattice.label == "xi=atoms,eta=atoms"


class TestComputeMoments:
    def test_gem1(self, gem1):
        m = compute_moments(gem1)
        assert m.mu == pytest.approx(1.0, rel=1e-8)
        assert m.sigma2 == pytest.approx(1.0, rel=1e-7)
        assert m.e_eta == pytest.approx(1.0, rel=1e-8)
        assert m.gamma == pytest.approx(0.0, abs=1e-7)

    def test_gem2(self, gem2):
        m = compute_moments(gem2)
        assert m.mu == pytest.approx(0.5, rel=1e-8)
        assert m.e_eta == pytest.approx(1.5, rel=1e-8)
        assert m.gamma == pytest.approx(-2.0, rel=1e-7)

    def test_independent_exponentials(self, exp_law):
        m = compute_moments(exp_law)
        assert m.mu == 1.0
        assert m.gamma == pytest.approx(0.75)

    def test_lattice(self, lattice):
        m = compute_moments(lattice)
        assert (m.mu, m.sigma2, m.s) == (1.0, 0.0, 0.0)
        assert m.gamma == pytest.approx(-0.5)

    def test_atomic_weight(self):
        m = compute_moments(StepLaw.derived(WeightLaw.point_masses([(0.5, 1.0)])))
        assert m.mu == pytest.approx(math.log(2.0))
        assert m.sigma2 == pytest.approx(0.0, abs=1e-15)


class TestLawFromDict:
    def test_bare_weight(self):
        law = law_from_dict({"kind": "gem", "theta": 1.5})
        assert law.is_derived and law.weight.theta == 1.5

    def test_independent(self):
        law = law_from_dict({"kind": "independent", "xi": {"kind": "exponential", "rate": 2.0},
                             "eta": {"kind": "gamma", "shape": 2.0, "rate": 1.0}})
        assert not law.is_derived
        assert compute_moments(law).e_eta == pytest.approx(2.0)

    def test_to_dict_is_accepted_back(self, exp_law):
        assert law_from_dict(exp_law.to_dict()) == exp_law

    def test_unknown(self):
        with pytest.raises(LawInvalid):
            law_from_dict({"kind": "cauchy"})
        with pytest.raises(LawInvalid):
            law_from_dict([1, 2])
