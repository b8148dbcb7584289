"""Gaussian prior from linearising the Langevin system about a Hamiltonian path.

The moment recursions propagate the mean and full joint covariance of the
Euler-Maruyama discretisation [delta_0, ..., delta_{N_h}] outward from the
midpoint node, then fill the off-diagonal blocks by sideways moves.  The
joint is stored dense, behind an explicit memory budget.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    IllConditionedObservationError,
    InconsistentCovarianceWarning,
    MemoryBudgetError,
)
from .flow import DiscretePath
from .kernel import GaussianKernel, ThermostatParams, grad_hamiltonian, hess_hamiltonian
from .numerics import cholesky, spectral_decomp

__all__ = [
    "GaussianDist",
    "LinearisedSystem",
    "PathMoments",
    "linearise_about",
    "midpoint_init_dist",
    "propagate_moments",
    "condition_on_endpoints",
    "sample_posterior_paths",
]

DEFAULT_MEMORY_BUDGET = 2 << 30  # bytes for the dense joint covariance


@dataclass
class GaussianDist:
    """Mean vector and symmetric PSD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match mean")
        scale = max(1.0, float(np.max(np.abs(self.cov))))
        if np.max(np.abs(self.cov - self.cov.T)) > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")


@dataclass
class LinearisedSystem:
    """Per-step matrices of the linearised Euler-Maruyama recursion.

    M_fwd[n] = I + h B+(t_n), M_bwd[n] = I - h B-(t_n), and the drift
    A[n] = -h lam [grad_p H; 0], all evaluated on the base Hamiltonian path.
    """

    base_path: DiscretePath
    thermostat: ThermostatParams
    M_fwd: np.ndarray  # (n_nodes, 2dN, 2dN)
    M_bwd: np.ndarray
    A: np.ndarray  # (n_nodes, 2dN)

    @property
    def n_steps(self) -> int:
        return self.base_path.n_steps

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def mid(self) -> int:
        return self.n_steps // 2


def linearise_about(
    base_path: DiscretePath, th: ThermostatParams, k: GaussianKernel
) -> LinearisedSystem:
    """Assemble the linearised system about a Hamiltonian base path.

    Requires an even step count so t = 1/2 is a grid node.
    """
    if base_path.n_steps % 2 != 0:
        raise ValueError("base path needs an even number of steps (midpoint node)")
    d = base_path.d
    dn = base_path.P.shape[1]
    m = 2 * dn
    h = abs(base_path.h)
    lam = th.lam
    n_nodes = base_path.n_steps + 1
    M_fwd = np.empty((n_nodes, m, m))
    M_bwd = np.empty((n_nodes, m, m))
    A = np.zeros((n_nodes, m))
    eye = np.eye(m)
    for n in range(n_nodes):
        p, q = base_path.P[n], base_path.Q[n]
        hess = hess_hamiltonian(p, q, d, k)
        h_pp = hess[:dn, :dn]
        h_pq = hess[:dn, dn:]
        h_qp = hess[dn:, :dn]
        h_qq = hess[dn:, dn:]
        b_plus = np.block([
            [-lam * h_pp - h_qp, -lam * h_pq - h_qq],
            [h_pp, h_pq],
        ])
        b_minus = np.block([
            [lam * h_pp - h_qp, lam * h_pq - h_qq],
            [h_pp, h_pq],
        ])
        M_fwd[n] = eye + h * b_plus
        M_bwd[n] = eye - h * b_minus
        gp, _ = grad_hamiltonian(p, q, d, k)
        A[n, :dn] = -h * lam * gp
    return LinearisedSystem(base_path=base_path, thermostat=th, M_fwd=M_fwd, M_bwd=M_bwd, A=A)


def midpoint_init_dist(sys: LinearisedSystem, k: GaussianKernel, delta2: float) -> GaussianDist:
    """Default deviation distribution at t = 1/2: N(0, blockdiag(C, delta2 I))
    with C the Gibbs momentum covariance at the base midpoint."""
    from .kernel import LandmarkConfig, kernel_matrix
    from .errors import SingularKernelError

    dn = sys.dim // 2
    q_mid = LandmarkConfig(d=sys.base_path.d, q=sys.base_path.Q[sys.mid])
    g = kernel_matrix(q_mid, k)
    if cholesky(g) is None:
        raise SingularKernelError("kernel matrix singular at the base midpoint")
    c_mom = np.kron(np.linalg.inv(g), np.eye(sys.base_path.d)) / sys.thermostat.beta
    cov = np.zeros((2 * dn, 2 * dn))
    cov[:dn, :dn] = 0.5 * (c_mom + c_mom.T)
    cov[dn:, dn:] = delta2 * np.eye(dn)
    return GaussianDist(mean=np.zeros(2 * dn), cov=cov)


@dataclass
class PathMoments:
    """Mean and joint covariance of the stacked phase states X = [Z_0..Z_{N_h}].

    Means are absolute (base path plus deviation mean); cov is the deviation
    covariance, which equals the covariance of X.
    """

    sys: LinearisedSystem
    node_means: np.ndarray  # (n_nodes, 2dN), absolute
    cov: np.ndarray  # (n_nodes*2dN, n_nodes*2dN)

    @property
    def mean_flat(self) -> np.ndarray:
        return self.node_means.ravel()

    def q_slice(self, node: int) -> slice:
        m = self.sys.dim
        dn = m // 2
        return slice(node * m + dn, (node + 1) * m)


def propagate_moments(
    sys: LinearisedSystem,
    init: GaussianDist,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> PathMoments:
    """Propagate mean and joint covariance from the midpoint node.

    Forward recursion mu_{n+1} = M+_n mu_n + A_n toward t = 1, the
    sign-flipped analogue toward t = 0, diagonal second-moment updates with
    per-step noise blockdiag(sigma^2 h I, 0), and sideways fills for the
    off-diagonal blocks.  The joint is exactly symmetric by construction.
    """
    m = sys.dim
    dn = m // 2
    n_nodes = sys.n_steps + 1
    total = n_nodes * m
    need = total * total * 8
    if need > memory_budget:
        raise MemoryBudgetError(
            f"joint covariance needs {need} bytes > budget {memory_budget}")
    mid = sys.mid
    h = abs(sys.base_path.h)
    sig2h = sys.thermostat.sigma**2 * h

    mu = np.empty((n_nodes, m))
    mu[mid] = init.mean
    for n in range(mid, n_nodes - 1):
        mu[n + 1] = sys.M_fwd[n] @ mu[n] + sys.A[n]
    for n in range(mid, 0, -1):
        mu[n - 1] = sys.M_bwd[n] @ mu[n] + sys.A[n]

    noise = np.zeros((m, m))
    noise[:dn, :dn] = sig2h * np.eye(dn)

    # Second moments S_{jk} = E[delta_j delta_k^T], filled block-wise.
    s = np.zeros((total, total))

    def blk(j, kk):
        return s[j * m:(j + 1) * m, kk * m:(kk + 1) * m]

    def set_blk(j, kk, val):
        s[j * m:(j + 1) * m, kk * m:(kk + 1) * m] = val

    set_blk(mid, mid, init.cov + np.outer(init.mean, init.mean))
    for n in range(mid, n_nodes - 1):
        mm = sys.M_fwd[n]
        a = sys.A[n]
        nxt = (mm @ blk(n, n) @ mm.T
               + np.outer(a, mu[n + 1]) + np.outer(mu[n + 1], a)
               - np.outer(a, a) + noise)
        set_blk(n + 1, n + 1, 0.5 * (nxt + nxt.T))
    for n in range(mid, 0, -1):
        mm = sys.M_bwd[n]
        a = sys.A[n]
        prv = (mm @ blk(n, n) @ mm.T
               + np.outer(a, mu[n - 1]) + np.outer(mu[n - 1], a)
               - np.outer(a, a) + noise)
        set_blk(n - 1, n - 1, 0.5 * (prv + prv.T))

    # Upper triangle, forward region rows: S_{j,k+1} = S_{j,k} M+_k^T + mu_j A_k^T.
    for j in range(mid, n_nodes):
        for kk in range(j, n_nodes - 1):
            set_blk(j, kk + 1, blk(j, kk) @ sys.M_fwd[kk].T + np.outer(mu[j], sys.A[kk]))
    # Rows below the midpoint hang off the row above: S_{j-1,k} = M-_j S_{j,k} + A_j mu_k^T.
    for j in range(mid, 0, -1):
        for kk in range(j, n_nodes):
            set_blk(j - 1, kk, sys.M_bwd[j] @ blk(j, kk) + np.outer(sys.A[j], mu[kk]))

    # Mirror the strict upper triangle of blocks.
    for j in range(n_nodes):
        for kk in range(j + 1, n_nodes):
            set_blk(kk, j, blk(j, kk).T)

    cov = s - np.outer(mu.ravel(), mu.ravel())
    cov = 0.5 * (cov + cov.T)
    base = np.hstack([sys.base_path.P, sys.base_path.Q])
    return PathMoments(sys=sys, node_means=base + mu, cov=cov)


def condition_on_endpoints(
    moments: PathMoments,
    obs_r: np.ndarray,
    obs_t: np.ndarray,
    delta2_obs: float,
) -> GaussianDist:
    """Condition the joint path Gaussian on noisy endpoint landmark positions.

    Standard Gaussian conditioning M_{1|2} = M1 + C12 C22^{-1} (y - M2),
    C_{1|2} = C11 - C12 C22^{-1} C21, solving against a Cholesky factor of
    C22 (the explicit inverse is never formed).
    """
    if not (delta2_obs > 0):
        raise ValueError("observation variance must be positive")
    dn = moments.sys.dim // 2
    n_last = moments.sys.n_steps
    s0 = moments.q_slice(0)
    s1 = moments.q_slice(n_last)
    c11 = moments.cov
    c21 = np.vstack([c11[s0, :], c11[s1, :]])  # (2dN, total)
    c22 = np.block([
        [c11[s0, s0] + delta2_obs * np.eye(dn), c11[s0, s1]],
        [c11[s1, s0], c11[s1, s1] + delta2_obs * np.eye(dn)],
    ])
    c22 = 0.5 * (c22 + c22.T)
    chol = cholesky(c22)
    if chol is None:
        raise IllConditionedObservationError("endpoint covariance is not positive definite")
    y = np.concatenate([np.asarray(obs_r, float).ravel(), np.asarray(obs_t, float).ravel()])
    m1 = moments.mean_flat
    m2 = np.concatenate([moments.node_means[0, dn:], moments.node_means[n_last, dn:]])
    w = np.linalg.solve(chol, np.column_stack([c21, (y - m2)[:, None]]))
    w = np.linalg.solve(chol.T, w)
    sol_c, sol_y = w[:, :-1], w[:, -1]
    mean = m1 + c21.T @ sol_y
    cov = c11 - c21.T @ sol_c
    return GaussianDist(mean=mean, cov=0.5 * (cov + cov.T))


def sample_posterior_paths(
    post: GaussianDist,
    sys: LinearisedSystem,
    n: int,
    rng: np.random.Generator,
) -> list[DiscretePath]:
    """Draw path samples from a (possibly clipped) Gaussian over stacked states."""
    dec = spectral_decomp(post.cov)
    lam = dec.eigenvalues
    lam_max = float(lam[-1]) if lam.size else 0.0
    clipped = np.clip(lam, 0.0, None)
    clipped[clipped < 1e-12 * max(lam_max, 0.0)] = 0.0
    removed = float(np.sum(lam) - np.sum(clipped))
    tr = float(np.sum(np.abs(lam)))
    if tr > 0 and abs(removed) > 0.01 * tr:
        warnings.warn("PSD clipping removed more than 1% of covariance trace",
                      InconsistentCovarianceWarning)
    scale = np.sqrt(clipped)
    m = sys.dim
    dn = m // 2
    n_nodes = sys.n_steps + 1
    times = sys.base_path.times
    paths = []
    for _ in range(n):
        xi = rng.standard_normal(post.mean.size)
        x = post.mean + dec.eigenvectors @ (scale * xi)
        nodes = x.reshape(n_nodes, m)
        paths.append(DiscretePath(times=times.copy(), P=nodes[:, :dn].copy(),
                                  Q=nodes[:, dn:].copy(), d=sys.base_path.d))
    return paths
