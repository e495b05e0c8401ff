import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nsmgp.episode import Episode
from nsmgp.errors import DegenerateData
from nsmgp.latent import (GpPrior, LatentProcess, conditional_mean, init_coreg_windowed,
                          init_loglen_semivariogram, prior_logpdf, semivariogram)
from nsmgp.linalg import mvn_logpdf


def rbf_oracle(t1, t2, amp, ln):
    return np.array([[amp**2 * np.exp(-(a - b) ** 2 / (2 * ln**2)) for b in t2] for a in t1])


class TestTypes:
    def test_prior_positive(self):
        with pytest.raises(ValueError):
            GpPrior(0.0, -1.0, 0.1)
        with pytest.raises(ValueError):
            GpPrior(0.0, 1.0, 0.0)

    def test_coreg_entry_lower_triangular(self):
        with pytest.raises(ValueError):
            LatentProcess(("coreg", 0, 1), np.zeros(3), GpPrior())

    def test_values_immutable(self):
        p = LatentProcess("loglen", np.zeros(3), GpPrior())
        with pytest.raises(ValueError):
            p.values[0] = 1.0


class TestPriorLogpdf:
    def test_mean_is_mvn_at_mean(self, rng):
        t = np.sort(rng.uniform(0, 1, 6))
        prior = GpPrior(1.5, 2.0, 0.3)
        p = LatentProcess("loglen", np.full(6, 1.5), prior)
        expected = mvn_logpdf(np.full(6, 1.5), 1.5, rbf_oracle(t, t, 2.0, 0.3))
        assert prior_logpdf(p, t) == pytest.approx(expected, abs=1e-9)
        shifted = LatentProcess("loglen", np.full(6, 1.6), prior)
        assert prior_logpdf(shifted, t) < prior_logpdf(p, t)

    def test_single_point_one_sd(self):
        prior = GpPrior(0.3, 2.0, 0.1)
        p = LatentProcess("logsd", [0.3 + 2.0], prior)
        assert prior_logpdf(p, np.array([0.0])) == pytest.approx(-0.5 - 0.5 * np.log(2 * np.pi * 4.0), abs=1e-14)

    def test_direct_construction(self, rng):
        t = 0.5 * np.arange(10) + rng.uniform(0, 0.2, 10)
        prior = GpPrior(-0.5, 1.3, 0.4)
        v = rng.standard_normal(10)
        expected = mvn_logpdf(v, -0.5, rbf_oracle(t, t, 1.3, 0.4))
        assert prior_logpdf(LatentProcess("loglen", v, prior), t) == pytest.approx(expected, abs=1e-12)

    @given(st.integers(0, 2**31 - 1), st.floats(1.05, 5.0))
    def test_decreases_along_rays(self, seed, k):
        r = np.random.default_rng(seed)
        t = np.sort(r.uniform(0, 1, 8)) + np.arange(8) * 0.05
        prior = GpPrior(0.7, 1.0, 0.2)
        d = r.standard_normal(8)
        near = prior_logpdf(LatentProcess("loglen", 0.7 + d, prior), t)
        far = prior_logpdf(LatentProcess("loglen", 0.7 + k * d, prior), t)
        assert far < near


class TestConditionalMean:
    def test_knots_return_values(self, rng):
        t = np.sort(rng.uniform(0, 1, 12))
        p = LatentProcess("loglen", rng.standard_normal(12), GpPrior(0.2, 1.0, 0.2))
        np.testing.assert_allclose(conditional_mean(p, t, t[[0, 5, 11]]), p.values[[0, 5, 11]], atol=1e-8)

    def test_mean_reversion(self, rng):
        t = np.sort(rng.uniform(0, 1, 12))
        p = LatentProcess("loglen", rng.standard_normal(12), GpPrior(-1.2, 1.0, 0.1))
        np.testing.assert_allclose(conditional_mean(p, t, [50.0, -30.0]), -1.2, atol=1e-6)

    def test_two_point_kriging(self):
        t = np.array([0.0, 1.0])
        prior = GpPrior(0.5, 1.5, 0.8)
        p = LatentProcess("loglen", [2.0, 2.0], prior)
        k = rbf_oracle(t, t, 1.5, 0.8)
        kq = rbf_oracle([0.5], t, 1.5, 0.8)
        expected = 0.5 + (kq @ np.linalg.solve(k, np.array([1.5, 1.5])))[0]
        assert conditional_mean(p, t, [0.5])[0] == pytest.approx(expected, abs=1e-10)

    def test_no_knots(self):
        p = LatentProcess("loglen", [], GpPrior(0.4, 1.0, 0.1))
        np.testing.assert_array_equal(conditional_mean(p, np.array([]), [0.1, 0.2]), [0.4, 0.4])

    @given(st.integers(2, 15), st.integers(0, 2**31 - 1))
    def test_identity_on_knots(self, n, seed):
        r = np.random.default_rng(seed)
        t = np.cumsum(r.uniform(0.05, 0.3, n))
        p = LatentProcess("loglen", r.standard_normal(n), GpPrior(0.0, 1.0, 0.2))
        np.testing.assert_allclose(conditional_mean(p, t, t), p.values, atol=1e-8)


class TestSemivariogram:
    def test_white_noise_has_near_zero_range(self, rng):
        t = np.linspace(0, 1, 300)
        ep = Episode(t, rng.standard_normal(300))
        centers, *_ = semivariogram(t, ep.obs[:, 0], 15, max_lag=0.5)
        assert init_loglen_semivariogram(ep)[0] == pytest.approx(np.log(centers[0]))

    def test_sinusoid_quarter_period(self):
        period = 0.4
        t = np.linspace(0, 2, 400)
        ep = Episode(t, np.sin(2 * np.pi * t / period))
        rng_est = np.exp(init_loglen_semivariogram(ep)[0])
        assert period / 8 <= rng_est <= period / 2

    def test_constant_series(self):
        with pytest.raises(DegenerateData):
            init_loglen_semivariogram(Episode(np.arange(10.0), np.full(10, 3.0)))

    def test_too_short(self):
        with pytest.raises(DegenerateData):
            init_loglen_semivariogram(Episode(np.arange(3.0), np.arange(3.0)))

    def test_constant_vector(self, rng):
        ep = Episode(np.linspace(0, 1, 50), rng.standard_normal((50, 2)))
        v = init_loglen_semivariogram(ep)
        assert v.shape == (50,) and np.all(v == v[0])


class TestWindowedCoreg:
    def test_univariate_sample_sd(self, rng):
        t = np.linspace(0, 1, 200)
        y = 2.0 * rng.standard_normal(200)
        ep = Episode(t, y)
        lt = init_coreg_windowed(ep, 0.1)
        for k in (0, 57, 123, 199):
            sel = np.abs(t - t[k]) <= 0.1
            assert lt[k, 0, 0] == pytest.approx(np.std(y[sel], ddof=1), rel=1e-9)
        assert np.all(np.abs(lt[:, 0, 0] - 2.0) < 0.8)

    def test_independent_channels(self, rng):
        t = np.linspace(0, 1, 500)
        ep = Episode(t, rng.standard_normal((500, 2)))
        lt = init_coreg_windowed(ep, 0.1)
        assert np.all(np.abs(lt[:, 1, 0]) <= 0.3)

    def test_identical_channels(self, rng):
        y = rng.standard_normal(100)
        ep = Episode(np.linspace(0, 1, 100), np.column_stack([y, y]))
        lt = init_coreg_windowed(ep, 0.2)
        np.testing.assert_allclose(lt[:, 1, 0], lt[:, 0, 0], rtol=1e-3)
        assert np.all(np.abs(lt[:, 1, 1]) <= 1e-2 * lt[:, 0, 0])

    def test_window_widens(self, rng):
        ep = Episode(np.array([0.0, 1.0, 2.0, 3.0, 4.0]), rng.standard_normal((5, 2)))
        lt = init_coreg_windowed(ep, 1e-3)
        assert np.all(np.isfinite(lt))

    @given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.floats(0.02, 0.5))
    def test_factors_reconstruct_psd(self, seed, m, w):
        r = np.random.default_rng(seed)
        ep = Episode(np.sort(r.uniform(0, 1, 40)) + np.arange(40) * 1e-3, r.standard_normal((40, m)))
        lt = init_coreg_windowed(ep, w)
        assert np.allclose(lt, np.tril(lt))
        b = np.einsum("nij,nkj->nik", lt, lt)
        assert np.all(np.linalg.eigvalsh(b) >= -1e-10)
