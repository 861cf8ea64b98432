import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiscale.core import make_rng
from multiscale.pacbayes import (
    GaussianSpec,
    gaussian_kl,
    mahalanobis_sq,
    reproduce_numerical_example,
    sample_savings,
)


def random_pd(d, rng):
    A = rng.normal(size=(d, d))
    return A @ A.T + d * np.eye(d)


class TestKL:
    def test_identity(self):
        P = GaussianSpec(np.arange(3.0), random_pd(3, make_rng(0)))
        assert gaussian_kl(P, P) == pytest.approx(0.0, abs=1e-12)

    def test_one_dimensional(self):
        assert gaussian_kl(GaussianSpec.isotropic([0.0], 1.0), GaussianSpec.isotropic([2.0], 1.0)) == pytest.approx(2.0)

    def test_isotropic_direct_evaluation(self):
        kl = gaussian_kl(GaussianSpec.isotropic(np.zeros(50), 1.0), GaussianSpec.isotropic(np.zeros(50), 200.0))
        np.testing.assert_allclose(kl, 0.5 * 50 * (np.log(200) - 1 + 1 / 200), rtol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_non_negative(self, seed, d):
        rng = make_rng(seed)
        Q = GaussianSpec(rng.normal(size=d), random_pd(d, rng))
        P = GaussianSpec(rng.normal(size=d), random_pd(d, rng))
        assert gaussian_kl(Q, P) >= -1e-12

    def test_asymmetric(self):
        Q = GaussianSpec.isotropic([0.0, 0.0], 1.0)
        P = GaussianSpec.diagonal([1.0, 0.0], [4.0, 0.5])
        assert abs(gaussian_kl(Q, P) - gaussian_kl(P, Q)) > 1e-3

    def test_diagonal_and_full_paths_agree(self):
        rng = make_rng(1)
        v_q, v_p = rng.uniform(0.5, 3, size=5), rng.uniform(0.5, 3, size=5)
        m_q, m_p = rng.normal(size=5), rng.normal(size=5)
        diag = gaussian_kl(GaussianSpec.diagonal(m_q, v_q), GaussianSpec.diagonal(m_p, v_p))
        full = gaussian_kl(GaussianSpec(m_q, np.diag(v_q)), GaussianSpec(m_p, np.diag(v_p)))
        np.testing.assert_allclose(diag, full, rtol=0, atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_kl(GaussianSpec.isotropic(np.zeros(2), 1.0), GaussianSpec.isotropic(np.zeros(3), 1.0))

    def test_non_pd(self):
        with pytest.raises(ValueError):
            GaussianSpec(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(ValueError):
            GaussianSpec.isotropic(np.zeros(2), 0.0)


class TestMahalanobis:
    def test_zero(self):
        assert mahalanobis_sq([1.0, 2.0], [1.0, 2.0], np.eye(2)) == 0.0

    def test_identity_is_euclidean(self):
        a, b = np.array([1.0, -2.0, 0.5]), np.array([0.0, 1.0, 2.0])
        np.testing.assert_allclose(mahalanobis_sq(a, b, np.eye(3)), np.sum((a - b) ** 2), rtol=1e-14)

    def test_diagonal(self):
        assert mahalanobis_sq([2.0, 3.0], [0.0, 0.0], np.array([4.0, 1.0])) == pytest.approx(10.0)

    def test_full_and_diagonal_agree(self):
        assert mahalanobis_sq([2.0, 3.0], [0.0, 0.0], np.diag([4.0, 1.0])) == pytest.approx(10.0, abs=1e-12)


class TestSampleSavings:
    def test_identical_priors(self):
        Q = GaussianSpec.isotropic(np.ones(4), 1.0)
        P0 = GaussianSpec.isotropic(np.zeros(4), 10.0)
        s = sample_savings(Q, P0, P0, 100.0)
        assert s.absolute == 0.0 and s.relative == 0.0

    def test_informed_prior_saves(self):
        Q = GaussianSpec.isotropic(np.ones(4), 1.0)
        P0 = GaussianSpec.isotropic(np.zeros(4), 10.0)
        P1 = GaussianSpec.isotropic(np.ones(4), 2.0)
        assert sample_savings(Q, P0, P1, 100.0).absolute > 0

    def test_mahalanobis_form(self):
        rng = make_rng(2)
        S = random_pd(4, rng)
        Q = GaussianSpec(rng.normal(size=4), random_pd(4, rng))
        P0 = GaussianSpec(rng.normal(size=4), S)
        P1 = GaussianSpec(rng.normal(size=4), S)
        s = sample_savings(Q, P0, P1, 37.0)
        np.testing.assert_allclose(s.absolute, s.mahalanobis_form, rtol=0, atol=1e-10)

    def test_no_mahalanobis_form_without_shared_covariance(self):
        Q = GaussianSpec.isotropic(np.zeros(2), 1.0)
        s = sample_savings(Q, GaussianSpec.isotropic(np.zeros(2), 5.0), GaussianSpec.isotropic(np.zeros(2), 2.0), 1.0)
        assert s.mahalanobis_form is None

    def test_invalid_constant(self):
        Q = GaussianSpec.isotropic(np.zeros(2), 1.0)
        with pytest.raises(ValueError):
            sample_savings(Q, Q, Q, 0.0)


class TestNumericalExample:
    def test_reduction(self):
        ex = reproduce_numerical_example()
        assert abs(100 * ex.reduction - 98.0) <= 0.5

    def test_reduction_with_micro_samples(self):
        ex = reproduce_numerical_example()
        assert abs(100 * ex.reduction_with_l1 - 88.2) <= 0.5

    def test_fully_informed_prior(self):
        ex = reproduce_numerical_example(learned=50)
        assert ex.n_l2 == pytest.approx(0.0, abs=1e-9)
        assert ex.reduction == pytest.approx(1.0)

    def test_report_formats(self):
        ex = reproduce_numerical_example()
        assert "98.0%" in ex.to_text() and '"n0"' in ex.to_json()

    def test_invalid_learned(self):
        with pytest.raises(ValueError):
            reproduce_numerical_example(learned=51)
