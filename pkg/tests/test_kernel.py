import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landreg.errors import SingularKernelError
from landreg.kernel import (
    GaussianKernel,
    LandmarkConfig,
    PhaseState,
    ThermostatParams,
    gibbs_momentum_sample,
    grad_hamiltonian,
    hamiltonian,
    hess_hamiltonian,
    kernel_eval,
    kernel_matrix,
)

FD = 1e-6


def random_state(rng, n, d=2, scale=1.0):
    return rng.normal(scale=scale, size=d * n), rng.normal(size=d * n)


class TestKernel:
    def test_hand_value(self):
        k = GaussianKernel(ell=1.0)
        # squared distance 8 -> exp(-8)
        assert kernel_eval([0.0, 0.0], [2.0, 2.0], k) == pytest.approx(np.exp(-8.0), rel=1e-14)

    def test_unit_at_coincidence(self, kernel):
        assert kernel_eval([0.3, -0.2], [0.3, -0.2], kernel) == 1.0

    def test_invalid_length_scale(self):
        with pytest.raises(ValueError):
            GaussianKernel(ell=0.0)

    def test_matrix_symmetric_unit_diagonal(self, kernel, rng):
        q = LandmarkConfig.from_points(rng.normal(size=(5, 2)))
        g = kernel_matrix(q, kernel)
        np.testing.assert_array_equal(g, g.T)
        np.testing.assert_allclose(np.diag(g), 1.0)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
    @settings(max_examples=50, deadline=None)
    def test_range_and_symmetry(self, xa, xb, ya, yb):
        k = GaussianKernel(ell=0.7)
        v = kernel_eval([xa, xb], [ya, yb], k)
        assert 0.0 < v <= 1.0
        assert v == pytest.approx(kernel_eval([ya, yb], [xa, xb], k), rel=1e-14)


class TestHamiltonian:
    def test_single_landmark_kinetic(self, kernel, rng):
        p = rng.normal(size=2)
        q = rng.normal(size=2)
        assert hamiltonian(p, q, 2, kernel) == pytest.approx(0.5 * float(p @ p), rel=1e-13)

    def test_translation_invariance(self, kernel, rng):
        p, q = random_state(rng, 4)
        shift = np.tile(rng.normal(size=2), 4)
        assert hamiltonian(p, q, 2, kernel) == pytest.approx(
            float(hamiltonian(p, q + shift, 2, kernel)), rel=1e-12)

    def test_nonnegative(self, kernel, rng):
        for _ in range(20):
            p, q = random_state(rng, 5)
            assert hamiltonian(p, q, 2, kernel) >= -1e-14

    def test_quadratic_form(self, kernel, rng):
        p, q = random_state(rng, 3)
        g = kernel_matrix(LandmarkConfig(d=2, q=q), kernel)
        expected = 0.5 * p @ np.kron(g, np.eye(2)) @ p
        assert hamiltonian(p, q, 2, kernel) == pytest.approx(expected, rel=1e-12)


class TestGradients:
    def test_grad_matches_fd(self, kernel, rng):
        p, q = random_state(rng, 4)
        gp, gq = grad_hamiltonian(p, q, 2, kernel)
        for i in range(p.size):
            e = np.zeros(p.size)
            e[i] = FD
            fdp = (hamiltonian(p + e, q, 2, kernel) - hamiltonian(p - e, q, 2, kernel)) / (2 * FD)
            fdq = (hamiltonian(p, q + e, 2, kernel) - hamiltonian(p, q - e, 2, kernel)) / (2 * FD)
            assert gp[i] == pytest.approx(fdp, abs=1e-7)
            assert gq[i] == pytest.approx(fdq, abs=1e-7)

    def test_grad_batched_matches_loop(self, kernel, rng):
        P = rng.normal(size=(7, 6))
        Q = rng.normal(size=(7, 6))
        gp_b, gq_b = grad_hamiltonian(P, Q, 2, kernel)
        for s in range(7):
            gp, gq = grad_hamiltonian(P[s], Q[s], 2, kernel)
            np.testing.assert_allclose(gp_b[s], gp, atol=1e-14)
            np.testing.assert_allclose(gq_b[s], gq, atol=1e-14)

    def test_hessian_matches_fd(self, kernel, rng):
        p, q = random_state(rng, 3)
        z = np.concatenate([p, q])
        hess = hess_hamiltonian(p, q, 2, kernel)

        def grad_flat(zz):
            gp, gq = grad_hamiltonian(zz[:6], zz[6:], 2, kernel)
            return np.concatenate([gp, gq])

        for i in range(12):
            e = np.zeros(12)
            e[i] = FD
            col = (grad_flat(z + e) - grad_flat(z - e)) / (2 * FD)
            np.testing.assert_allclose(hess[:, i], col, atol=5e-7)

    def test_hessian_symmetric(self, kernel, rng):
        p, q = random_state(rng, 4)
        hess = hess_hamiltonian(p, q, 2, kernel)
        np.testing.assert_array_equal(hess, hess.T)

    def test_hessian_pp_block_is_kernel_kron(self, kernel, rng):
        p, q = random_state(rng, 3)
        hess = hess_hamiltonian(p, q, 2, kernel)
        g = kernel_matrix(LandmarkConfig(d=2, q=q), kernel)
        np.testing.assert_allclose(hess[:6, :6], np.kron(g, np.eye(2)), atol=1e-12)


class TestThermostat:
    def test_sigma_derived(self):
        th = ThermostatParams(beta=8.0, lam=1.0)
        assert th.sigma == pytest.approx(0.5, rel=1e-15)

    def test_beta_derived(self):
        th = ThermostatParams.from_lam_sigma(lam=1.0, sigma=0.5)
        assert th.beta == pytest.approx(8.0, rel=1e-15)

    def test_relation_violation_rejected(self):
        with pytest.raises(ValueError):
            ThermostatParams(beta=8.0, lam=1.0, sigma=0.6)

    def test_zero_lam_needs_zero_sigma(self):
        ThermostatParams(beta=1.0, lam=0.0)  # ok, sigma -> 0
        with pytest.raises(ValueError):
            ThermostatParams(beta=1.0, lam=0.0, sigma=0.1)

    def test_invalid_values(self):
        with pytest.raises(ValueError):
            ThermostatParams(beta=-1.0, lam=0.1)
        with pytest.raises(ValueError):
            ThermostatParams(beta=1.0, lam=-0.1)


class TestGibbs:
    def test_moments(self, kernel, rng):
        q = LandmarkConfig.from_points(np.array([[0.0, 0.0], [0.7, 0.2], [0.2, 0.8]]))
        beta = 4.0
        draws = gibbs_momentum_sample(q, beta, kernel, rng, size=40_000)
        g = kernel_matrix(q, kernel)
        target = np.kron(np.linalg.inv(g), np.eye(2)) / beta
        assert np.abs(draws.mean(axis=0)).max() < 0.01
        np.testing.assert_allclose(np.cov(draws.T), target, atol=0.01)

    def test_single_draw_shape(self, kernel, rng):
        q = LandmarkConfig.from_points(np.array([[0.0, 0.0], [1.0, 0.0]]))
        p = gibbs_momentum_sample(q, 2.0, kernel, rng)
        assert p.shape == (4,)

    def test_coincident_landmarks_raise(self, kernel, rng):
        q = LandmarkConfig(d=2, q=np.array([0.0, 0.0, 0.0, 0.0]))
        with pytest.raises(SingularKernelError):
            gibbs_momentum_sample(q, 1.0, kernel, rng)


class TestStateTypes:
    def test_phase_state_roundtrip(self, rng):
        z = rng.normal(size=10)
        st_ = PhaseState.from_z(z)
        np.testing.assert_array_equal(st_.z, z)
        rev = st_.reversed()
        np.testing.assert_array_equal(rev.p, -st_.p)
        np.testing.assert_array_equal(rev.q, st_.q)

    def test_landmark_config_validation(self):
        with pytest.raises(ValueError):
            LandmarkConfig(d=2, q=np.array([1.0, 2.0, 3.0]))
        with pytest.raises(ValueError):
            LandmarkConfig(d=2, q=np.array([1.0, np.inf]))
        cfg = LandmarkConfig.from_points(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert cfg.n == 2 and cfg.d == 2
