"""Gaussian kernel, landmark Hamiltonian, its derivatives, and Gibbs momenta.

Layout convention: flat vectors are landmark-major, q = [q_1x, q_1y, q_2x, ...],
so Kronecker products G (x) I_d are realised by np.kron(G, eye(d)) or by
blockwise matvecs on arrays reshaped to (..., N, d).

All Hamiltonian evaluations broadcast over leading batch axes, which the flow
integrators use to run finite-difference Jacobian columns in one pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularKernelError
from .numerics import cholesky

__all__ = [
    "LandmarkConfig",
    "PhaseState",
    "GaussianKernel",
    "ThermostatParams",
    "kernel_matrix",
    "hamiltonian",
    "grad_hamiltonian",
    "hess_hamiltonian",
    "gibbs_momentum_sample",
]


@dataclass(frozen=True)
class LandmarkConfig:
    """N landmarks in R^d as one flat vector of length d*N."""

    d: int
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).ravel())
        if self.d < 1:
            raise ValueError("spatial dimension must be positive")
        if self.q.size == 0 or self.q.size % self.d != 0:
            raise ValueError("coordinate vector length must be a positive multiple of d")
        if not np.all(np.isfinite(self.q)):
            raise ValueError("landmark coordinates must be finite")

    @property
    def n(self) -> int:
        return self.q.size // self.d

    @property
    def points(self) -> np.ndarray:
        """View as an (N, d) array."""
        return self.q.reshape(self.n, self.d)

    @classmethod
    def from_points(cls, points: np.ndarray) -> "LandmarkConfig":
        points = np.asarray(points, dtype=float)
        return cls(d=points.shape[1], q=points.ravel())


@dataclass(frozen=True)
class PhaseState:
    """Momentum/position pair; z = [p, q] in R^{2dN}."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).ravel())
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).ravel())
        if self.p.size != self.q.size:
            raise ValueError("p and q must have equal length")

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])

    @classmethod
    def from_z(cls, z: np.ndarray) -> "PhaseState":
        z = np.asarray(z, dtype=float).ravel()
        half = z.size // 2
        return cls(p=z[:half], q=z[half:])

    def reversed(self) -> "PhaseState":
        """Momentum reversal R[p, q] = [-p, q]."""
        return PhaseState(p=-self.p, q=self.q)


@dataclass(frozen=True)
class GaussianKernel:
    """G(x, y) = exp(-||x - y||^2 / ell^2) for a length scale ell > 0.

    The eval/grad interface is what downstream code consumes, so alternative
    kernels can slot in, but the Gaussian is the only one shipped.
    """

    ell: float = 1.0

    def __post_init__(self):
        if not (self.ell > 0):
            raise ValueError("length scale must be positive")

    def eval(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r2 = np.sum((x - y) ** 2, axis=-1)
        return np.exp(-r2 / self.ell**2)

    def grad_x(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """d/dx G(x, y) = -(2/ell^2) (x - y) G(x, y)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        g = self.eval(x, y)
        return -(2.0 / self.ell**2) * (x - y) * g[..., None]


def kernel_eval(x, y, k: GaussianKernel) -> float:
    return float(k.eval(np.asarray(x, float), np.asarray(y, float)))


def _as_points(q: np.ndarray, d: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q.reshape(*q.shape[:-1], q.shape[-1] // d, d)


def _gram(qpts: np.ndarray, ell: float) -> np.ndarray:
    """Kernel matrix on (..., N, d) points; exactly symmetric by mirroring."""
    diff = qpts[..., :, None, :] - qpts[..., None, :, :]
    r2 = np.sum(diff * diff, axis=-1)
    g = np.exp(-r2 / ell**2)
    iu = np.triu_indices(g.shape[-1], k=1)
    g[..., iu[1], iu[0]] = g[..., iu[0], iu[1]]
    return g


def kernel_matrix(q: LandmarkConfig, k: GaussianKernel) -> np.ndarray:
    """N x N matrix with entries G(q_i, q_j); unit diagonal, symmetric."""
    return _gram(q.points, k.ell)


def hamiltonian(p: np.ndarray, q: np.ndarray, d: int, k: GaussianKernel) -> np.ndarray:
    """H = (1/2) sum_ij p_i . p_j G(q_i, q_j); broadcasts over batch axes."""
    pp = _as_points(p, d)
    qp = _as_points(q, d)
    g = _gram(qp, k.ell)
    inner = np.einsum("...ia,...ja->...ij", pp, pp)
    return 0.5 * np.einsum("...ij,...ij->...", inner, g)


def grad_hamiltonian(p: np.ndarray, q: np.ndarray, d: int, k: GaussianKernel):
    """(grad_p H, grad_q H), each shaped like p; broadcasts over batch axes.

    grad_p H = (G(q) (x) I_d) p and
    grad_{q_i} H = sum_j (p_i . p_j) grad_{q_i} G(q_i, q_j).
    """
    pp = _as_points(p, d)
    qp = _as_points(q, d)
    g = _gram(qp, k.ell)
    gp = np.einsum("...ij,...ja->...ia", g, pp)
    inner = np.einsum("...ia,...ja->...ij", pp, pp)
    diff = qp[..., :, None, :] - qp[..., None, :, :]
    w = inner * g
    gq = -(2.0 / k.ell**2) * np.einsum("...ij,...ija->...ia", w, diff)
    shape = np.asarray(p, dtype=float).shape
    return gp.reshape(shape), gq.reshape(shape)


def hamiltonian_state(z: PhaseState, d: int, k: GaussianKernel) -> float:
    return float(hamiltonian(z.p, z.q, d, k))


def hess_hamiltonian(p: np.ndarray, q: np.ndarray, d: int, k: GaussianKernel) -> np.ndarray:
    """Symmetric 2dN x 2dN Hessian in z = [p, q], assembled analytically.

    Blocks: H_pp = G (x) I_d; H_qp[(k,b),(i,a)] = d^2 H / dq_{kb} dp_{ia};
    H_qq from the second kernel derivatives.  Unbatched.
    """
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    n = p.size // d
    dn = p.size
    pp = p.reshape(n, d)
    qp = q.reshape(n, d)
    g = _gram(qp, k.ell)
    diff = qp[:, None, :] - qp[None, :, :]  # (N, N, d), q_i - q_j
    c = 2.0 / k.ell**2

    h_pp = np.kron(g, np.eye(d))

    # D[i,j,b] = dG(q_i,q_j)/dq_{ib}
    dgrad = -c * diff * g[..., None]

    # H_qp[(k,b),(i,a)] = delta_ki * sum_j D[i,j,b] p_{ja}  -  p_{ka} D[i,k,b]
    m1 = np.einsum("ijb,ja->iba", dgrad, pp)  # (N, d, d): i, b, a
    h_qp = np.zeros((dn, dn))
    h_qp4 = h_qp.reshape(n, d, n, d)  # (k, b, i, a)
    for i in range(n):
        h_qp4[i, :, i, :] += m1[i]
    h_qp4 -= np.einsum("ka,ikb->kbia", pp, dgrad)

    # E[i,j,b,c] = d^2 G(q_i,q_j) / dq_{ib} dq_{ic}
    eye_d = np.eye(d)
    e2 = (-c * eye_d[None, None, :, :] * g[..., None, None]
          + c * c * diff[..., None, :] * diff[..., :, None] * g[..., None, None])

    inner = pp @ pp.T  # p_i . p_j
    # H_qq[(k,b),(l,c)] = delta_kl sum_j (p_l.p_j) E[l,j,b,c] - (p_l.p_k) E[l,k,b,c]
    m2 = np.einsum("lj,ljbc->lbc", inner, e2)
    h_qq = np.zeros((dn, dn))
    h_qq4 = h_qq.reshape(n, d, n, d)
    for l in range(n):
        h_qq4[l, :, l, :] += m2[l]
    h_qq4 -= np.einsum("lk,lkbc->kblc", inner, e2)

    top = np.hstack([h_pp, h_qp.T])
    bot = np.hstack([h_qp, h_qq])
    h = np.vstack([top, bot])
    return 0.5 * (h + h.T)


@dataclass(frozen=True)
class ThermostatParams:
    """(beta, lambda, sigma) tied by the fluctuation-dissipation relation.

    Construct from (beta, lam) or (lam, sigma); the third parameter is derived
    so that sigma^2 * beta = 2 * lam holds exactly.
    """

    beta: float
    lam: float
    sigma: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.beta is None:
            if self.sigma is None or self.lam is None:
                raise ValueError("need two of (beta, lam, sigma)")
            if self.sigma <= 0:
                raise ValueError("sigma must be positive to derive beta")
            object.__setattr__(self, "beta", 2.0 * self.lam / self.sigma**2)
        if not (self.beta > 0):
            raise ValueError("beta must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.sigma is None:
            object.__setattr__(self, "sigma", np.sqrt(2.0 * self.lam / self.beta))
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.lam > 0:
            rel = abs(self.sigma**2 * self.beta - 2.0 * self.lam) / (2.0 * self.lam)
            if rel > 1e-12:
                raise ValueError("fluctuation-dissipation relation violated")
        elif self.sigma != 0:
            raise ValueError("lam = 0 requires sigma = 0")

    @classmethod
    def from_lam_sigma(cls, lam: float, sigma: float) -> "ThermostatParams":
        return cls(beta=None, lam=lam, sigma=sigma)  # type: ignore[arg-type]


def gibbs_cholesky(q: LandmarkConfig, k: GaussianKernel) -> np.ndarray:
    """Lower Cholesky factor of the kernel matrix; raises on coincident landmarks."""
    g = kernel_matrix(q, k)
    chol = cholesky(g)
    if chol is None:
        raise SingularKernelError("kernel matrix is singular (coincident landmarks?)")
    return chol


def gibbs_momentum_sample(
    q: LandmarkConfig,
    beta: float,
    k: GaussianKernel,
    rng: np.random.Generator,
    size: int | None = None,
) -> np.ndarray:
    """Draw p ~ N(0, C) with C = (beta G(q))^{-1} (x) I_d.

    Solving L^T x = xi for G = L L^T gives cov(x) = G^{-1}, applied per spatial
    coordinate and scaled by 1/sqrt(beta).
    """
    chol = gibbs_cholesky(q, k)
    n, d = q.n, q.d
    nsamp = 1 if size is None else size
    xi = rng.standard_normal((nsamp, n, d))
    x = np.linalg.solve(np.broadcast_to(chol.T, (nsamp, n, n)), xi)
    p = x.reshape(nsamp, n * d) / np.sqrt(beta)
    return p[0] if size is None else p
