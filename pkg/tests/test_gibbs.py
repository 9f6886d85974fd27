import numpy as np
import pytest
from scipy.stats import binom

from spinglass.core import ModelSpec, RandomStream, sample_couplings
from spinglass.gibbs import (_defects_from_distance_rows,
                             incremental_delta_consistency,
                             inverse_temperature, mcmc_chain,
                             overlap_distribution, total_variation,
                             ultrametric_defects)


def _sk_sample(N, seed):
    return sample_couplings(ModelSpec(kind="sk", N=N), RandomStream(seed))


class TestMcmcChain:
    def test_validation(self):
        c = _sk_sample(4, 0)
        with pytest.raises(ValueError):
            mcmc_chain(c, -0.1, 100, 2, RandomStream(0))
        with pytest.raises(ValueError):
            mcmc_chain(c, 1.0, 0, 2, RandomStream(0))
        with pytest.raises(ValueError):
            mcmc_chain(c, 1.0, 100, 4, RandomStream(0))

    def test_deterministic(self):
        c = _sk_sample(6, 1)
        a = mcmc_chain(c, 1.0, 500, 2, RandomStream(5))
        b = mcmc_chain(c, 1.0, 500, 2, RandomStream(5))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_replicas_independent(self):
        c = _sk_sample(6, 1)
        a, b = mcmc_chain(c, 0.5, 500, 2, RandomStream(5))
        assert not np.array_equal(a, b)

    def test_beta_zero_uniform(self):
        c = _sk_sample(8, 2)
        stats = overlap_distribution(c, 0.0, "mcmc", sweeps=40_000,
                                     rng=RandomStream(3))
        assert abs(stats.moment1) <= 4 * stats.moment1_std_error + 1e-3
        # uniform replicas: E[(sigma.sigma'/N)^2] = 1/N
        assert stats.moment2 == pytest.approx(1 / 8, abs=0.01)

    def test_bipartite_chain_runs(self):
        c = sample_couplings(ModelSpec(kind="bipartite", N=4), RandomStream(0))
        reps = mcmc_chain(c, 0.8, 200, 2, RandomStream(1))
        assert reps[0].shape[1] == 8


class TestOverlapDistribution:
    def test_beta_zero_binomial(self):
        # overlap of two uniform replicas is (sum of N iid +-1)/N
        N = 10
        stats = overlap_distribution(_sk_sample(N, 4), 0.0, "exact")
        want = binom.pmf(np.arange(N + 1), N, 0.5)
        assert np.allclose(stats.masses, want, atol=1e-12)

    def test_moment1_nonnegative_identity(self):
        for seed in range(5):
            stats = overlap_distribution(_sk_sample(8, seed), 1.5, "exact")
            assert stats.moment1 >= -1e-12

    def test_masses_sum_to_one(self):
        stats = overlap_distribution(_sk_sample(8, 1), 2.0, "exact")
        assert stats.masses.sum() == pytest.approx(1.0, abs=1e-9)
        assert stats.moment2 >= stats.moment1**2 - 1e-9

    def test_histogram_moments_consistent(self):
        N = 8
        stats = overlap_distribution(_sk_sample(N, 1), 1.0, "exact")
        centers = np.arange(-N, N + 1, 2) / N
        assert stats.masses @ centers**2 == pytest.approx(stats.moment2,
                                                          abs=1e-10)

    def test_exact_vs_mcmc_moments(self):
        c = _sk_sample(8, 7)
        exact = overlap_distribution(c, 2.0, "exact")
        mc = overlap_distribution(c, 2.0, "mcmc", sweeps=200_000,
                                  rng=RandomStream(8), tempering=True)
        assert abs(mc.moment1 - exact.moment1) <= 3 * mc.moment1_std_error
        assert abs(mc.moment2 - exact.moment2) <= 3 * mc.moment2_std_error

    def test_caps(self):
        with pytest.raises(ValueError):
            overlap_distribution(_sk_sample(14, 0), 1.0, "exact")
        with pytest.raises(NotImplementedError):
            c = sample_couplings(ModelSpec(kind="bipartite", N=4),
                                 RandomStream(0))
            overlap_distribution(c, 1.0, "exact")


class TestUltrametricDefects:
    def test_identical_replicas_zero_defect(self):
        d = _defects_from_distance_rows(np.zeros(1), np.zeros(1),
                                        np.zeros((1, 1)))
        assert d[0, 0] == 0.0

    def test_spec_triangle_arithmetic(self):
        # sigma=(1,1,1,1), sigma'=-sigma, sigma''=(1,1,-1,-1):
        # distances (4, 2*sqrt2, 2*sqrt2) -> defect (4-2*sqrt2)/2
        N = 4
        s = np.ones(N)
        sp = -s
        spp = np.array([1.0, 1.0, -1.0, -1.0])
        def dist(a, b):
            return np.linalg.norm(a - b) / np.sqrt(N)
        d = _defects_from_distance_rows(np.array([dist(s, sp)]),
                                        np.array([dist(s, spp)]),
                                        np.array([[dist(sp, spp)]]))
        assert d[0, 0] == pytest.approx((4 - 2 * np.sqrt(2)) / 2, abs=1e-12)

    def test_permutation_invariant(self):
        gen = np.random.default_rng(0)
        a, b, c = gen.random(3), gen.random(4), gen.random((3, 4))
        base = _defects_from_distance_rows(a, b, c)
        swapped = _defects_from_distance_rows(b, a, c.T)
        assert np.allclose(np.sort(base.ravel()), np.sort(swapped.ravel()))

    def test_exact_vs_mcmc_violation(self):
        c = _sk_sample(8, 7)
        exact = ultrametric_defects(c, 2.0, 0.5, "exact")
        mc = ultrametric_defects(c, 2.0, 0.5, "mcmc", sweeps=200_000,
                                 rng=RandomStream(9), tempering=True)
        assert abs(mc.violation_fraction - exact.violation_fraction) <= \
            3 * mc.violation_std_error
        assert 0.0 <= exact.violation_fraction <= 1.0

    def test_defect_quantiles_nonnegative(self):
        stats = ultrametric_defects(_sk_sample(6, 2), 1.0, 0.5, "exact")
        for _, v in stats.defect_quantiles:
            assert v >= 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            ultrametric_defects(_sk_sample(6, 0), 1.0, 0.0, "exact")
        with pytest.raises(ValueError):
            ultrametric_defects(_sk_sample(10, 0), 1.0, 0.5, "exact")


class TestInverseTemperature:
    def test_symmetric_levels(self):
        assert inverse_temperature([-1.0, 1.0], 0.0) == pytest.approx(0.0,
                                                                      abs=1e-10)

    def test_tanh_closed_form(self):
        got = inverse_temperature([-1.0, 1.0], -np.tanh(1.0))
        assert got == pytest.approx(1.0, abs=1e-10)

    def test_symmetric_spectrum(self):
        assert inverse_temperature([0.0, 1.0, 2.0], 1.0) == pytest.approx(
            0.0, abs=1e-10)

    @pytest.mark.parametrize("beta", [-3.0, -1.0, 0.5, 2.0, 3.0])
    def test_round_trip(self, beta):
        e = np.array([-1.3, -0.2, 0.4, 1.9, 2.2])
        w = np.exp(-beta * e - np.max(-beta * e))
        target = e @ w / w.sum()
        assert inverse_temperature(e, target) == pytest.approx(beta, abs=1e-8)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            inverse_temperature([-1.0, 1.0], 1.5)


class TestIncrementalDelta:
    @pytest.mark.parametrize("kind,N", [("sk", 10), ("bipartite", 6)])
    def test_incremental_matches_recompute(self, kind, N):
        c = sample_couplings(ModelSpec(kind=kind, N=N), RandomStream(17))
        worst = incremental_delta_consistency(c, 10_000, RandomStream(18))
        assert worst <= 1e-9


def test_total_variation_self_zero():
    stats = overlap_distribution(_sk_sample(8, 1), 1.0, "exact")
    assert total_variation(stats, stats) == 0.0
