"""Shared dense linear algebra, optimisation, and RNG utilities.

Everything here is deliberately small and dense: the largest matrices in the
package are joint path covariances (guarded by an explicit byte budget) and
Laplace Hessians of size a few hundred.  NumPy/SciPy back all routines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

__all__ = [
    "SpectralDecomp",
    "MinimiseResult",
    "cholesky",
    "spectral_decomp",
    "psd_project",
    "expm_sym",
    "lbfgs_minimise",
    "rng_stream",
]

_SYM_TOL = 1e-10


def _check_symmetric(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > _SYM_TOL * scale:
        raise ValueError("matrix is not symmetric")
    return a


def cholesky(a: np.ndarray) -> np.ndarray | None:
    """Lower Cholesky factor of a symmetric matrix, or None if not PD.

    A None return is a normal outcome and doubles as the coincident-landmark
    detector for kernel matrices.
    """
    a = _check_symmetric(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None


@dataclass(frozen=True)
class SpectralDecomp:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns

    def reconstruct(self) -> np.ndarray:
        q, lam = self.eigenvectors, self.eigenvalues
        return (q * lam) @ q.T


def spectral_decomp(a: np.ndarray) -> SpectralDecomp:
    a = _check_symmetric(a)
    lam, q = np.linalg.eigh(a)
    return SpectralDecomp(eigenvalues=lam, eigenvectors=q)


def psd_project(a: np.ndarray, rel_tol: float = 1e-12, pinv: bool = False) -> np.ndarray:
    """Zero out eigenvalues below rel_tol * lambda_max.

    With pinv=True, return the pseudo-inverse on the retained spectrum
    (used for Laplace covariances).
    """
    dec = spectral_decomp(a)
    lam = dec.eigenvalues.copy()
    lam_max = float(lam[-1]) if lam.size else 0.0
    cut = rel_tol * max(lam_max, 0.0)
    keep = lam > cut
    if pinv:
        if not np.any(keep):
            from .errors import DegenerateCurvatureError

            raise DegenerateCurvatureError("all eigenvalues clipped; curvature is degenerate")
        lam = np.where(keep, lam, np.inf)
        lam = 1.0 / lam
    else:
        lam = np.where(keep, lam, 0.0)
    q = dec.eigenvectors
    out = (q * lam) @ q.T
    return 0.5 * (out + out.T)


def expm_sym(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of a symmetric matrix via eigendecomposition."""
    dec = spectral_decomp(a)
    q = dec.eigenvectors
    out = (q * np.exp(dec.eigenvalues)) @ q.T
    return 0.5 * (out + out.T)


@dataclass
class MinimiseResult:
    x: np.ndarray
    value: float
    grad_norm: float
    converged: bool
    iterations: int


def lbfgs_minimise(
    fg,
    x0: np.ndarray,
    gtol: float = 1e-8,
    max_iter: int = 500,
) -> MinimiseResult:
    """Minimise a smooth function given by fg(x) -> (value, gradient).

    Backed by SciPy's L-BFGS-B.  Convergence means the Euclidean gradient
    norm at exit is below gtol (checked directly, not inferred from SciPy's
    status).
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    res = scipy.optimize.minimize(
        fg,
        x0,
        jac=True,
        method="L-BFGS-B",
        options={
            "maxiter": max_iter,
            "maxcor": 10,
            # scipy's pgtol is on the infinity norm; scale to hit the 2-norm target
            "gtol": gtol / np.sqrt(n),
            "ftol": 1e-16,
        },
    )
    value, grad = fg(res.x)
    gnorm = float(np.linalg.norm(grad))
    return MinimiseResult(
        x=np.asarray(res.x, dtype=float),
        value=float(value),
        grad_norm=gnorm,
        converged=gnorm <= gtol,
        iterations=int(res.nit),
    )


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Counter-based Philox stream; (seed, stream_id) replays bit-identically."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream_id], dtype=np.uint64)))
