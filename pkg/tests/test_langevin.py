import numpy as np
import pytest
import scipy.linalg

from landreg.errors import DegeneratePairError
from landreg.flow import FlowSettings
from landreg.kernel import (
    PhaseState,
    ThermostatParams,
    grad_hamiltonian,
    kernel_matrix,
)
from landreg.langevin import (
    MidpointPrior,
    em_step_backward,
    em_step_conserving,
    em_step_forward,
    ou_approx_variance,
    ou_exact,
    ou_moments,
    pushforward_ensemble,
    sample_midpoint_paths,
)

from conftest import circle


@pytest.fixture
def thermostat():
    return ThermostatParams(beta=25.0, lam=0.5)


class TestEmSteps:
    def test_forward_literal_update(self, kernel, thermostat, rng):
        z = PhaseState(p=rng.normal(size=6), q=rng.normal(size=6))
        dw = rng.normal(size=6) * 0.1
        h = 0.05
        out = em_step_forward(z, h, thermostat, kernel, 2, dw)
        gp, gq = grad_hamiltonian(z.p, z.q, 2, kernel)
        np.testing.assert_allclose(
            out.p, z.p + h * (-thermostat.lam * gp - gq) + thermostat.sigma * dw, atol=1e-14)
        np.testing.assert_allclose(out.q, z.q + h * gp, atol=1e-14)

    def test_backward_flips_dissipation(self, kernel, thermostat, rng):
        z = PhaseState(p=rng.normal(size=6), q=rng.normal(size=6))
        h = 0.05
        fwd = em_step_forward(z, h, thermostat, kernel, 2, np.zeros(6))
        bwd = em_step_backward(z, h, thermostat, kernel, 2, np.zeros(6))
        gp, _ = grad_hamiltonian(z.p, z.q, 2, kernel)
        np.testing.assert_allclose(bwd.p - fwd.p, 2 * h * thermostat.lam * gp, atol=1e-14)
        np.testing.assert_allclose(bwd.q, fwd.q, atol=1e-14)

    def test_zero_friction_is_euler_hamiltonian(self, kernel, rng):
        th = ThermostatParams(beta=10.0, lam=0.0)
        z = PhaseState(p=rng.normal(size=4), q=rng.normal(size=4))
        fwd = em_step_forward(z, 0.1, th, kernel, 2, np.zeros(4))
        bwd = em_step_backward(z, 0.1, th, kernel, 2, np.zeros(4))
        np.testing.assert_allclose(fwd.z, bwd.z, atol=1e-15)


class TestMidpointSampling:
    def test_shapes_and_grid(self, kernel, thermostat):
        prior = MidpointPrior(q_star=circle(3), delta2=0.01, thermostat=thermostat)
        paths = sample_midpoint_paths(prior, 4, FlowSettings(h=0.1), kernel, rng_seed=0)
        assert len(paths) == 4
        for p in paths:
            assert p.times[0] == 0.0 and p.times[-1] == 1.0
            assert p.Q.shape == (11, 6)

    def test_deterministic_replay(self, kernel, thermostat):
        prior = MidpointPrior(q_star=circle(3), delta2=0.01, thermostat=thermostat)
        a = sample_midpoint_paths(prior, 2, FlowSettings(h=0.1), kernel, rng_seed=7)
        b = sample_midpoint_paths(prior, 2, FlowSettings(h=0.1), kernel, rng_seed=7)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.Q, pb.Q)
            np.testing.assert_array_equal(pa.P, pb.P)

    def test_midpoint_marginal(self, kernel, thermostat):
        """The t = 1/2 node is an exact draw from the midpoint distribution."""
        delta2 = 0.04
        prior = MidpointPrior(q_star=circle(3), delta2=delta2, thermostat=thermostat)
        paths = sample_midpoint_paths(prior, 400, FlowSettings(h=0.5), kernel, rng_seed=1)
        mids = np.stack([p.Q[1] for p in paths])
        dev = mids - circle(3).q
        assert abs(dev.mean()) < 0.03
        assert abs(dev.std() - np.sqrt(delta2)) < 0.02

    def test_odd_step_count_rejected(self, kernel, thermostat):
        prior = MidpointPrior(q_star=circle(3), delta2=0.01, thermostat=thermostat)
        with pytest.raises(ValueError):
            sample_midpoint_paths(prior, 1, FlowSettings(h=0.2), kernel, rng_seed=0)

    def test_invalid_delta2(self, kernel, thermostat):
        with pytest.raises(ValueError):
            MidpointPrior(q_star=circle(3), delta2=0.0, thermostat=thermostat)


class TestOuUpdate:
    def test_moments_t0(self, kernel, thermostat, rng):
        q0 = circle(3)
        p0 = rng.normal(size=6)
        mean, _, var = ou_moments(p0, q0, 0.0, thermostat, kernel)
        np.testing.assert_allclose(mean, p0, atol=1e-12)
        np.testing.assert_allclose(var, 0.0, atol=1e-15)

    def test_mean_is_matrix_exponential(self, kernel, thermostat, rng):
        q0 = circle(3)
        p0 = rng.normal(size=6)
        t = 0.4
        mean, _, _ = ou_moments(p0, q0, t, thermostat, kernel)
        g = kernel_matrix(q0, kernel)
        e = scipy.linalg.expm(-thermostat.lam * t * g)
        np.testing.assert_allclose(mean, np.kron(e, np.eye(2)) @ p0, atol=1e-10)

    def test_exact_draw_covariance(self, kernel, thermostat, rng):
        q0 = circle(2)
        p0 = rng.normal(size=4)
        t = 0.7
        draws = ou_exact(p0, q0, t, thermostat, kernel, rng, size=30_000)
        g = kernel_matrix(q0, kernel)
        ct = np.linalg.inv(g) @ (np.eye(2) - scipy.linalg.expm(-2 * thermostat.lam * t * g))
        target = np.kron(ct, np.eye(2)) / thermostat.beta
        np.testing.assert_allclose(np.cov(draws.T), target, atol=5e-3)

    def test_approx_variance(self, thermostat):
        assert ou_approx_variance(0.3, thermostat) == pytest.approx(
            thermostat.sigma**2 * 0.3, rel=1e-15)

    def test_zero_friction_identity(self, kernel, rng):
        th = ThermostatParams(beta=5.0, lam=0.0)
        q0 = circle(3)
        p0 = rng.normal(size=6)
        out = ou_exact(p0, q0, 1.0, th, kernel, rng)
        np.testing.assert_allclose(out, p0, atol=1e-12)


class TestConservingStep:
    def test_total_momentum_exact(self, kernel, thermostat, rng):
        q = circle(4)
        z = PhaseState(p=rng.normal(size=8), q=q.q)
        total0 = z.p.reshape(4, 2).sum(axis=0)
        for _ in range(50):
            dw = 0.1 * rng.normal(size=6)
            z = em_step_conserving(z, 0.01, thermostat, kernel, 2, dw)
        total1 = z.p.reshape(4, 2).sum(axis=0)
        np.testing.assert_allclose(total1, total0, atol=1e-12)

    def test_coincident_pair_raises(self, kernel, thermostat):
        z = PhaseState(p=np.zeros(4), q=np.array([0.3, 0.3, 0.3, 0.3]))
        with pytest.raises(DegeneratePairError):
            em_step_conserving(z, 0.01, thermostat, kernel, 2, np.zeros(1))

    def test_wrong_increment_count(self, kernel, thermostat):
        z = PhaseState(p=np.zeros(6), q=circle(3).q)
        with pytest.raises(ValueError):
            em_step_conserving(z, 0.01, thermostat, kernel, 2, np.zeros(2))

    def test_matches_plain_step_at_zero_coupling(self, kernel, thermostat, rng):
        """With w = 0 the pairwise terms vanish, leaving Hamiltonian Euler."""
        q = circle(3)
        z = PhaseState(p=rng.normal(size=6), q=q.q)
        out = em_step_conserving(z, 0.05, thermostat, kernel, 2, rng.normal(size=3),
                                 w=lambda r: 0.0)
        th0 = ThermostatParams(beta=5.0, lam=0.0)
        ref = em_step_forward(z, 0.05, th0, kernel, 2, np.zeros(6))
        np.testing.assert_allclose(out.z, ref.z, atol=1e-14)


class TestPushforwardEnsemble:
    def test_output_structure(self, kernel, thermostat):
        out = pushforward_ensemble(circle(4), thermostat, kernel, FlowSettings(h=0.1),
                                   n_samples=3, rng_seed=0)
        assert len(out) == 3
        for item in out:
            assert item["grid"].shape == (441, 2)
            assert item["curve"].shape == (4, 2)
            assert item["path"].n_steps == 10

    def test_replay(self, kernel, thermostat):
        a = pushforward_ensemble(circle(4), thermostat, kernel, FlowSettings(h=0.2),
                                 n_samples=2, rng_seed=9)
        b = pushforward_ensemble(circle(4), thermostat, kernel, FlowSettings(h=0.2),
                                 n_samples=2, rng_seed=9)
        np.testing.assert_array_equal(a[0]["grid"], b[0]["grid"])
        np.testing.assert_array_equal(a[1]["curve"], b[1]["curve"])
