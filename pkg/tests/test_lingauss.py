import numpy as np
import pytest

from landreg.errors import (
    InconsistentCovarianceWarning,
    MemoryBudgetError,
)
from landreg.flow import FlowSettings, flow, shoot_register
from landreg.kernel import LandmarkConfig, PhaseState, ThermostatParams
from landreg.lingauss import (
    GaussianDist,
    condition_on_endpoints,
    linearise_about,
    midpoint_init_dist,
    propagate_moments,
    sample_posterior_paths,
)
from landreg.numerics import rng_stream

from conftest import circle


def small_system(kernel, beta=25.0, lam=0.1, h=0.25, delta2=0.01):
    q_r = circle(2, radius=0.8)
    q_t = LandmarkConfig(d=2, q=circle(2, radius=0.95).q + 0.05)
    settings = FlowSettings(h=h)
    th = ThermostatParams(beta=beta, lam=lam)
    shoot = shoot_register(q_r, q_t, settings, kernel, tol=1e-8)
    sys = linearise_about(shoot.path, th, kernel)
    init = midpoint_init_dist(sys, kernel, delta2)
    return q_r, q_t, sys, init


class TestLinearisation:
    def test_odd_steps_rejected(self, kernel, rng):
        path = flow(PhaseState(p=rng.normal(size=4), q=circle(2).q), 0.0, 1.0,
                    FlowSettings(h=0.2), kernel, 2)
        th = ThermostatParams(beta=10.0, lam=0.1)
        with pytest.raises(ValueError):
            linearise_about(path, th, kernel)

    def test_single_landmark_matrices(self, kernel):
        """N = 1: H = p^2/2 per coordinate, so the blocks are constants."""
        p0 = np.array([0.3, -0.2])
        path = flow(PhaseState(p=p0, q=np.zeros(2)), 0.0, 1.0, FlowSettings(h=0.5), kernel, 2)
        th = ThermostatParams(beta=4.0, lam=0.25)
        sys = linearise_about(path, th, kernel)
        h = 0.5
        eye2 = np.eye(2)
        b_plus = np.block([[-th.lam * eye2, np.zeros((2, 2))], [eye2, np.zeros((2, 2))]])
        np.testing.assert_allclose(sys.M_fwd[0], np.eye(4) + h * b_plus, atol=1e-12)
        b_minus = np.block([[th.lam * eye2, np.zeros((2, 2))], [eye2, np.zeros((2, 2))]])
        np.testing.assert_allclose(sys.M_bwd[0], np.eye(4) - h * b_minus, atol=1e-12)
        np.testing.assert_allclose(sys.A[0], np.concatenate([-h * th.lam * p0, np.zeros(2)]),
                                   atol=1e-12)

    def test_init_dist_blocks(self, kernel):
        _, _, sys, init = small_system(kernel)
        dn = sys.dim // 2
        assert np.all(init.mean == 0.0)
        np.testing.assert_allclose(init.cov[dn:, dn:], 0.01 * np.eye(dn), atol=1e-15)
        assert np.all(np.linalg.eigvalsh(init.cov[:dn, :dn]) > 0)


class TestMomentPropagation:
    def test_matches_monte_carlo(self, kernel):
        _, _, sys, init = small_system(kernel)
        moments = propagate_moments(sys, init)

        m, dn = sys.dim, sys.dim // 2
        nn = sys.n_steps + 1
        mid = sys.mid
        h = abs(sys.base_path.h)
        sig = sys.thermostat.sigma
        gen = rng_stream(2024, 0)
        chol = np.linalg.cholesky(init.cov + 1e-14 * np.eye(m))
        nmc = 60_000
        x = np.zeros((nmc, nn, m))
        x[:, mid, :] = gen.standard_normal((nmc, m)) @ chol.T
        for n in range(mid, nn - 1):
            noise = np.zeros((nmc, m))
            noise[:, :dn] = sig * np.sqrt(h) * gen.standard_normal((nmc, dn))
            x[:, n + 1, :] = x[:, n, :] @ sys.M_fwd[n].T + sys.A[n] + noise
        for n in range(mid, 0, -1):
            noise = np.zeros((nmc, m))
            noise[:, :dn] = sig * np.sqrt(h) * gen.standard_normal((nmc, dn))
            x[:, n - 1, :] = x[:, n, :] @ sys.M_bwd[n].T + sys.A[n] + noise
        flat = x.reshape(nmc, -1)
        base = np.hstack([sys.base_path.P, sys.base_path.Q]).ravel()
        np.testing.assert_allclose(moments.mean_flat, base + flat.mean(axis=0), atol=5e-3)
        np.testing.assert_allclose(moments.cov, np.cov(flat.T), atol=2e-3)

    def test_deterministic_when_noiseless(self, kernel):
        """lam = 0: zero initial covariance propagates to exactly zero."""
        q_r = circle(2, radius=0.8)
        path = shoot_register(q_r, circle(2, radius=0.9), FlowSettings(h=0.25), kernel).path
        th = ThermostatParams(beta=25.0, lam=0.0)
        sys = linearise_about(path, th, kernel)
        init = GaussianDist(mean=np.zeros(sys.dim), cov=np.zeros((sys.dim, sys.dim)))
        moments = propagate_moments(sys, init)
        np.testing.assert_allclose(moments.cov, 0.0, atol=1e-14)
        base = np.hstack([sys.base_path.P, sys.base_path.Q])
        np.testing.assert_allclose(moments.node_means, base, atol=1e-14)

    def test_memory_budget(self, kernel):
        _, _, sys, init = small_system(kernel)
        with pytest.raises(MemoryBudgetError):
            propagate_moments(sys, init, memory_budget=100)

    def test_covariance_symmetric_psd(self, kernel):
        _, _, sys, init = small_system(kernel)
        moments = propagate_moments(sys, init)
        np.testing.assert_array_equal(moments.cov, moments.cov.T)
        assert np.linalg.eigvalsh(moments.cov).min() > -1e-10


class TestConditioning:
    def test_matches_dense_oracle(self, kernel):
        q_r, q_t, sys, init = small_system(kernel)
        moments = propagate_moments(sys, init)
        delta2 = 0.01
        post = condition_on_endpoints(moments, q_r.q, q_t.q, delta2)

        dn = sys.dim // 2
        nn = sys.n_steps + 1
        obs = np.zeros((2 * dn, nn * sys.dim))
        obs[:dn, moments.q_slice(0)] = np.eye(dn)
        obs[dn:, moments.q_slice(sys.n_steps)] = np.eye(dn)
        c = moments.cov
        mu = moments.mean_flat
        s22 = obs @ c @ obs.T + delta2 * np.eye(2 * dn)
        gain = c @ obs.T @ np.linalg.inv(s22)
        y = np.concatenate([q_r.q, q_t.q])
        np.testing.assert_allclose(post.mean, mu + gain @ (y - obs @ mu), atol=1e-10)
        np.testing.assert_allclose(post.cov, c - gain @ obs @ c, atol=1e-10)

    def test_loewner_dominated_by_prior(self, kernel):
        q_r, q_t, sys, init = small_system(kernel)
        moments = propagate_moments(sys, init)
        post = condition_on_endpoints(moments, q_r.q, q_t.q, 0.01)
        assert np.linalg.eigvalsh(moments.cov - post.cov).min() >= -1e-8

    def test_small_obs_noise_pins_endpoints(self, kernel):
        q_r, q_t, sys, init = small_system(kernel)
        moments = propagate_moments(sys, init)
        post = condition_on_endpoints(moments, q_r.q, q_t.q, 1e-10)
        dn = sys.dim // 2
        np.testing.assert_allclose(post.mean[moments.q_slice(0)], q_r.q, atol=1e-4)
        np.testing.assert_allclose(post.mean[moments.q_slice(sys.n_steps)], q_t.q, atol=1e-4)

    def test_invalid_obs_variance(self, kernel):
        q_r, q_t, sys, init = small_system(kernel)
        moments = propagate_moments(sys, init)
        with pytest.raises(ValueError):
            condition_on_endpoints(moments, q_r.q, q_t.q, 0.0)


class TestPosteriorSampling:
    def test_sample_mean_converges(self, kernel):
        q_r, q_t, sys, init = small_system(kernel)
        moments = propagate_moments(sys, init)
        post = condition_on_endpoints(moments, q_r.q, q_t.q, 0.01)
        paths = sample_posterior_paths(post, sys, 4000, rng_stream(5, 0))
        stacked = np.stack([np.hstack([p.P, p.Q]).ravel() for p in paths])
        np.testing.assert_allclose(stacked.mean(axis=0), post.mean, atol=0.01)

    def test_clipping_warns_on_indefinite_cov(self, kernel):
        q_r, q_t, sys, init = small_system(kernel)
        bad_cov = np.diag(np.concatenate([np.ones(sys.dim), -np.ones((sys.n_steps) * sys.dim)]))
        post = GaussianDist(mean=np.zeros((sys.n_steps + 1) * sys.dim), cov=bad_cov)
        with pytest.warns(InconsistentCovarianceWarning):
            sample_posterior_paths(post, sys, 1, rng_stream(0, 0))


class TestGaussianDist:
    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            GaussianDist(mean=np.zeros(2), cov=np.array([[1.0, 0.2], [0.0, 1.0]]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            GaussianDist(mean=np.zeros(3), cov=np.eye(2))
