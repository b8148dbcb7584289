"""Stochastic landmark dynamics: Euler-Maruyama stepping, midpoint-prior path
sampling, exact Ornstein-Uhlenbeck momentum updates, the momentum-conserving
variant, and push-forward ensembles.

Noise is hypoelliptic throughout: Brownian increments enter the momenta only,
positions are updated deterministically from the current momenta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePairError, SingularKernelError
from .flow import DiscretePath, FlowSettings, push_forward
from .kernel import (
    GaussianKernel,
    LandmarkConfig,
    PhaseState,
    ThermostatParams,
    gibbs_momentum_sample,
    grad_hamiltonian,
    kernel_matrix,
)
from .numerics import cholesky, rng_stream, spectral_decomp

__all__ = [
    "MidpointPrior",
    "em_step_forward",
    "em_step_backward",
    "sample_midpoint_paths",
    "ou_exact",
    "ou_approx_variance",
    "em_step_conserving",
    "pushforward_ensemble",
]


@dataclass(frozen=True)
class MidpointPrior:
    """mu* = N(0, C) x N(q*, delta2 I) on the phase point at t = 1/2."""

    q_star: LandmarkConfig
    delta2: float
    thermostat: ThermostatParams

    def __post_init__(self):
        if not (self.delta2 > 0):
            raise ValueError("positional variance must be positive")


def em_step_forward(
    z: PhaseState, h: float, th: ThermostatParams, k: GaussianKernel, d: int, dW: np.ndarray
) -> PhaseState:
    """One Euler-Maruyama step of the forward Langevin system.

    P' = P + (-lam grad_p H - grad_q H) h + sigma dW;  Q' = Q + grad_p H h.
    dW is the caller-supplied Brownian increment, N(0, h I).
    """
    gp, gq = grad_hamiltonian(z.p, z.q, d, k)
    p_new = z.p + h * (-th.lam * gp - gq) + th.sigma * np.asarray(dW, float).ravel()
    q_new = z.q + h * gp
    return PhaseState(p=p_new, q=q_new)


def em_step_backward(
    z: PhaseState, h: float, th: ThermostatParams, k: GaussianKernel, d: int, dW: np.ndarray
) -> PhaseState:
    """As the forward step but with the dissipation sign flipped.

    Used for the half of a midpoint-seeded path that marches toward t = 0;
    callers conjugate by the momentum reversal R[p, q] = [-p, q] so that the
    left half-path has the time-reversed law of the right half.
    """
    gp, gq = grad_hamiltonian(z.p, z.q, d, k)
    p_new = z.p + h * (th.lam * gp - gq) + th.sigma * np.asarray(dW, float).ravel()
    q_new = z.q + h * gp
    return PhaseState(p=p_new, q=q_new)


def sample_midpoint_paths(
    prior: MidpointPrior,
    n_paths: int,
    settings: FlowSettings,
    k: GaussianKernel,
    rng_seed: int,
) -> list[DiscretePath]:
    """Sample Langevin paths over [0, 1] seeded at t = 1/2 from mu*.

    Each path draws z(1/2) ~ N(0, C) x N(q*, delta2 I), then marches forward
    for t > 1/2 and, after momentum reversal, backward-steps toward t = 0.
    The grid has an even step count so t = 1/2 is a node exactly.  Paths use
    independent Philox streams keyed by (seed, path index).
    """
    n = settings.n_steps(1.0)
    if n % 2 != 0:
        raise ValueError("midpoint sampling needs an even number of steps")
    half = n // 2
    h = 1.0 / n
    th = prior.thermostat
    d = prior.q_star.d
    dn = prior.q_star.q.size
    times = np.linspace(0.0, 1.0, n + 1)
    paths = []
    for j in range(n_paths):
        rng = rng_stream(rng_seed, j)
        p_mid = gibbs_momentum_sample(prior.q_star, th.beta, k, rng)
        q_mid = prior.q_star.q + np.sqrt(prior.delta2) * rng.standard_normal(dn)
        P = np.empty((n + 1, dn))
        Q = np.empty((n + 1, dn))
        P[half], Q[half] = p_mid, q_mid
        z = PhaseState(p=p_mid, q=q_mid)
        for m in range(half, n):
            dw = np.sqrt(h) * rng.standard_normal(dn)
            z = em_step_forward(z, h, th, k, d, dw)
            P[m + 1], Q[m + 1] = z.p, z.q
        y = PhaseState(p=-p_mid, q=q_mid)
        for m in range(half, 0, -1):
            dw = np.sqrt(h) * rng.standard_normal(dn)
            y = em_step_backward(y, h, th, k, d, dw)
            P[m - 1], Q[m - 1] = -y.p, y.q
        paths.append(DiscretePath(times=times.copy(), P=P, Q=Q, d=d))
    return paths


def _kernel_spectrum(q0: LandmarkConfig, k: GaussianKernel):
    g = kernel_matrix(q0, k)
    if cholesky(g) is None:
        raise SingularKernelError("kernel matrix is singular (coincident landmarks?)")
    return spectral_decomp(g)


def ou_moments(p0: np.ndarray, q0: LandmarkConfig, t: float, th: ThermostatParams,
               k: GaussianKernel):
    """Mean and covariance factors of the exact OU momentum update.

    Mean is (exp(-lam G t) (x) I_d) p0; covariance is C_t (x) I_d with
    C_t = (1/beta) G^{-1} (I - exp(-2 lam t G)), diagonalised in the kernel
    eigenbasis.  Returns (mean, eigenvectors U, per-mode variances).
    """
    dec = _kernel_spectrum(q0, k)
    u, g_eig = dec.eigenvectors, dec.eigenvalues
    d = q0.d
    p_modes = u.T @ np.asarray(p0, float).reshape(q0.n, d)
    decay = np.exp(-th.lam * g_eig * t)
    mean = (u @ (decay[:, None] * p_modes)).ravel()
    var = (1.0 - np.exp(-2.0 * th.lam * t * g_eig)) / (th.beta * g_eig)
    if th.lam == 0.0 or t == 0.0:
        var = np.zeros_like(var)
    return mean, u, var


def ou_exact(
    p0: np.ndarray,
    q0: LandmarkConfig,
    t: float,
    th: ThermostatParams,
    k: GaussianKernel,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """Exact Gaussian draw of the OU momentum relaxation at time t."""
    mean, u, var = ou_moments(p0, q0, t, th, k)
    n, d = q0.n, q0.d
    nsamp = 1 if size is None else size
    xi = rng.standard_normal((nsamp, n, d)) * np.sqrt(var)[None, :, None]
    p = mean[None, :] + np.einsum("ij,sjd->sid", u, xi).reshape(nsamp, n * d)
    return p[0] if size is None else p


def ou_approx_variance(t: float, th: ThermostatParams) -> float:
    """Small-(lam/beta) approximation C_t ~ sigma^2 t used by the splitting prior."""
    return th.sigma**2 * t


def em_step_conserving(
    z: PhaseState,
    h: float,
    th: ThermostatParams,
    k: GaussianKernel,
    d: int,
    dW_pairs: np.ndarray,
    w=None,
) -> PhaseState:
    """Pairwise-projected Langevin step that conserves total momentum exactly.

    Dissipation acts on relative landmark velocities projected on the
    inter-landmark unit vectors, and each scalar noise W_ij = W_ji enters the
    pair (i, j) with opposite signs, so pair contributions to sum_i p_i cancel
    pathwise.  dW_pairs holds increments for i < j, row-major.
    """
    n = z.p.size // d
    if n < 2:
        raise ValueError("conserving step needs at least two landmarks")
    pts = z.q.reshape(n, d)
    gp, gq = grad_hamiltonian(z.p, z.q, d, k)
    vel = gp.reshape(n, d)  # grad_p H is the landmark velocity
    p_new = (z.p - h * gq).reshape(n, d).copy()
    dw = np.asarray(dW_pairs, float).ravel()
    if dw.size != n * (n - 1) // 2:
        raise ValueError("need one Brownian increment per unordered pair")
    idx = 0
    for i in range(n):
        for j in range(i + 1, n):
            rij = pts[i] - pts[j]
            dist = float(np.linalg.norm(rij))
            if dist == 0.0:
                raise DegeneratePairError(f"landmarks {i} and {j} coincide")
            unit = rij / dist
            wij = 1.0 if w is None else float(w(dist))
            drag = th.lam * wij**2 * float(unit @ (vel[i] - vel[j])) * unit
            kick = th.sigma * wij * dw[idx] * unit
            p_new[i] += -h * drag + kick
            p_new[j] += h * drag - kick
            idx += 1
    return PhaseState(p=p_new.ravel(), q=z.q + h * gp)


def _simulate_forward(z0: PhaseState, th, k, d, n_steps, h, rng) -> DiscretePath:
    dn = z0.p.size
    P = np.empty((n_steps + 1, dn))
    Q = np.empty_like(P)
    P[0], Q[0] = z0.p, z0.q
    z = z0
    for m in range(n_steps):
        dw = np.sqrt(h) * rng.standard_normal(dn)
        z = em_step_forward(z, h, th, k, d, dw)
        P[m + 1], Q[m + 1] = z.p, z.q
    return DiscretePath(times=h * np.arange(n_steps + 1), P=P, Q=Q, d=d)


def pushforward_ensemble(
    q_r: LandmarkConfig,
    th: ThermostatParams,
    k: GaussianKernel,
    settings: FlowSettings,
    n_samples: int,
    rng_seed: int,
    grid_points: np.ndarray | None = None,
    curve_points: np.ndarray | None = None,
):
    """Sample Gibbs momenta at q_r, run the Langevin flow, warp a grid.

    Returns a list of dicts with the simulated path, the warped grid, and the
    warped curve (defaults: 21x21 grid on [-1, 1]^2 and the landmark polygon).
    """
    d = q_r.d
    if grid_points is None:
        axis = np.linspace(-1.0, 1.0, 21)
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        grid_points = np.stack([m.ravel() for m in mesh], axis=-1)
    if curve_points is None:
        curve_points = q_r.points
    n = settings.n_steps(1.0)
    h = 1.0 / n
    pf_settings = FlowSettings(h=settings.h, integrator="explicit-euler")
    out = []
    for s in range(n_samples):
        rng = rng_stream(rng_seed, s)
        p0 = gibbs_momentum_sample(q_r, th.beta, k, rng)
        path = _simulate_forward(PhaseState(p=p0, q=q_r.q), th, k, d, n, h, rng)
        out.append({
            "path": path,
            "grid": push_forward(path, grid_points, pf_settings, k),
            "curve": push_forward(path, curve_points, pf_settings, k),
        })
    return out
