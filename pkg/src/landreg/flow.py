"""Deterministic Hamiltonian integration, shooting, and push-forward warping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IntegrationDivergedError, OutOfRangeError
from .kernel import GaussianKernel, LandmarkConfig, PhaseState, grad_hamiltonian, hamiltonian

__all__ = [
    "FlowSettings",
    "DiscretePath",
    "flow",
    "flow_endpoint",
    "shoot_register",
    "ShootResult",
    "velocity_field",
    "push_forward",
    "path_energy",
]


@dataclass(frozen=True)
class FlowSettings:
    """Integrator choice and step size; direction comes from the time interval."""

    h: float = 1e-2
    integrator: str = "rk4"

    def __post_init__(self):
        if not (self.h > 0):
            raise ValueError("step size must be positive")
        if self.integrator not in ("rk4", "explicit-euler"):
            raise ValueError(f"unknown integrator {self.integrator!r}")

    def n_steps(self, interval: float) -> int:
        n = int(round(abs(interval) / self.h))
        if n < 1 or abs(n * self.h - abs(interval)) > 1e-12 * max(1.0, abs(interval)):
            raise ValueError("step size does not divide the time interval")
        return n


@dataclass
class DiscretePath:
    """Phase states on a uniform time grid; the carrier of flows and SDE paths.

    P and Q have shape (n_nodes, dN); times t_n = t0 + n * h where h may be
    negative for backward flows.
    """

    times: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    d: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        if not (self.times.ndim == 1 and self.P.shape == self.Q.shape
                and self.P.shape[0] == self.times.size):
            raise ValueError("inconsistent path shapes")

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])

    def state(self, n: int) -> PhaseState:
        return PhaseState(p=self.P[n], q=self.Q[n])

    def nearest_index(self, t: float) -> int:
        t0, t1 = float(self.times[0]), float(self.times[-1])
        lo, hi = min(t0, t1), max(t0, t1)
        if t < lo - 1e-12 or t > hi + 1e-12:
            raise OutOfRangeError(f"time {t} outside path interval [{lo}, {hi}]")
        return int(np.argmin(np.abs(self.times - t)))

    def reversed(self) -> "DiscretePath":
        """Time reversal t -> t0 + t1 - t with momenta negated."""
        return DiscretePath(
            times=self.times[0] + self.times[-1] - self.times[::-1],
            P=-self.P[::-1].copy(),
            Q=self.Q[::-1].copy(),
            d=self.d,
        )


def _rhs(p, q, d, k, sign=1.0):
    gp, gq = grad_hamiltonian(p, q, d, k)
    return -sign * gq, sign * gp  # (dp/dt, dq/dt)


def _step(p, q, h, d, k, integrator, sign):
    if integrator == "explicit-euler":
        dp, dq = _rhs(p, q, d, k, sign)
        return p + h * dp, q + h * dq
    k1p, k1q = _rhs(p, q, d, k, sign)
    k2p, k2q = _rhs(p + 0.5 * h * k1p, q + 0.5 * h * k1q, d, k, sign)
    k3p, k3q = _rhs(p + 0.5 * h * k2p, q + 0.5 * h * k2q, d, k, sign)
    k4p, k4q = _rhs(p + h * k3p, q + h * k3q, d, k, sign)
    p_new = p + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
    q_new = q + (h / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q)
    return p_new, q_new


def flow(
    z0: PhaseState,
    t_from: float,
    t_to: float,
    settings: FlowSettings,
    k: GaussianKernel,
    d: int,
) -> DiscretePath:
    """Integrate the Hamiltonian system from t_from to t_to, either direction.

    Backward flow integrates the negated vector field on a forward step grid,
    so the stepping code is shared and sign errors are confined to one place.
    """
    n = settings.n_steps(t_to - t_from)
    sign = 1.0 if t_to >= t_from else -1.0
    h_signed = (t_to - t_from) / n
    P = np.empty((n + 1, z0.p.size))
    Q = np.empty_like(P)
    P[0], Q[0] = z0.p, z0.q
    p, q = z0.p.copy(), z0.q.copy()
    for i in range(n):
        p, q = _step(p, q, abs(h_signed), d, k, settings.integrator, sign)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise IntegrationDivergedError(i + 1)
        P[i + 1], Q[i + 1] = p, q
    times = t_from + h_signed * np.arange(n + 1)
    return DiscretePath(times=times, P=P, Q=Q, d=d)


def flow_endpoint(p0, q0, t_from, t_to, settings, k, d):
    """Final (p, q) only; broadcasts over leading batch axes of p0/q0."""
    n = settings.n_steps(t_to - t_from)
    sign = 1.0 if t_to >= t_from else -1.0
    h = abs(t_to - t_from) / n
    p, q = np.asarray(p0, float), np.asarray(q0, float)
    for i in range(n):
        p, q = _step(p, q, h, d, k, settings.integrator, sign)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise IntegrationDivergedError(i + 1)
    return p, q


@dataclass
class ShootResult:
    p0: np.ndarray
    path: DiscretePath
    residual: float
    converged: bool
    iterations: int


def shoot_register(
    q_r: LandmarkConfig,
    q_t: LandmarkConfig,
    settings: FlowSettings,
    k: GaussianKernel,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> ShootResult:
    """Solve the landmark boundary-value problem by Gauss-Newton shooting.

    Finds p0 with || S_q(1; 0, [p0, q_r]) - q_t || <= tol, starting from
    p0 = 0.  The Jacobian of the endpoint map is built by forward finite
    differences, with all perturbed flows integrated as one batch.
    """
    if q_r.d != q_t.d or q_r.n != q_t.n:
        raise ValueError("reference and target must share (d, N)")
    d = q_r.d
    dn = q_r.q.size
    p0 = np.zeros(dn)

    def endpoint(p_batch):
        q_batch = np.broadcast_to(q_r.q, p_batch.shape).copy()
        _, q_end = flow_endpoint(p_batch, q_batch, 0.0, 1.0, settings, k, d)
        return q_end

    r = endpoint(p0[None])[0] - q_t.q
    best_p0, best_res = p0.copy(), float(np.linalg.norm(r))
    converged = best_res <= tol
    it = 0
    while not converged and it < max_iter:
        it += 1
        fd = 1e-6 * max(1.0, float(np.linalg.norm(p0)))
        batch = np.vstack([p0[None] + fd * np.eye(dn), p0[None]])
        ends = endpoint(batch)
        base = ends[-1]
        jac = (ends[:-1] - base).T / fd  # (dN, dN)
        r = base - q_t.q
        try:
            step = np.linalg.solve(jac.T @ jac, -jac.T @ r)
        except np.linalg.LinAlgError:
            step = -jac.T @ r
        # Armijo backtracking on the squared endpoint mismatch
        f0 = float(r @ r)
        g_dot_step = float(2.0 * (jac.T @ r) @ step)
        alpha = 1.0
        for _ in range(40):
            trial = p0 + alpha * step
            rt = endpoint(trial[None])[0] - q_t.q
            if float(rt @ rt) <= f0 + 1e-4 * alpha * g_dot_step:
                break
            alpha *= 0.5
        else:
            break
        p0 = p0 + alpha * step
        res = float(np.linalg.norm(rt))
        if res < best_res:
            best_p0, best_res = p0.copy(), res
        converged = res <= tol

    path = flow(PhaseState(p=best_p0, q=q_r.q), 0.0, 1.0, settings, k, d)
    return ShootResult(p0=best_p0, path=path, residual=best_res,
                       converged=converged, iterations=it)


def velocity_field(t: float, x: np.ndarray, path: DiscretePath, k: GaussianKernel) -> np.ndarray:
    """v(t, x) = sum_i p_i(t) G(x, q_i(t)) using nearest-node path values.

    x may be a single point (d,) or a batch (..., d).
    """
    n = path.nearest_index(t)
    d = path.d
    pts = path.Q[n].reshape(-1, d)
    mom = path.P[n].reshape(-1, d)
    x = np.asarray(x, dtype=float)
    g = k.eval(x[..., None, :], pts)  # (..., N)
    return g @ mom


def push_forward(
    path: DiscretePath,
    points: np.ndarray,
    settings: FlowSettings,
    k: GaussianKernel,
) -> np.ndarray:
    """Warp points through the flow induced by the path's velocity field.

    rk4 steps span two path intervals so every stage lands exactly on a grid
    node; explicit-euler steps one interval at a time.  Note the warp of a
    linearised-prior path need not send q(0) to q(1) -- only genuinely
    Hamiltonian or Langevin paths have that consistency.
    """
    pts = np.asarray(points, dtype=float).copy()
    n = path.n_steps
    h = path.h
    d = path.d

    def vel(node_idx, x):
        lm_q = path.Q[node_idx].reshape(-1, d)
        lm_p = path.P[node_idx].reshape(-1, d)
        g = k.eval(x[..., None, :], lm_q)
        return g @ lm_p

    if settings.integrator == "explicit-euler":
        for i in range(n):
            pts = pts + h * vel(i, pts)
    else:
        if n % 2 != 0:
            raise ValueError("rk4 push-forward needs an even number of path steps")
        h2 = 2.0 * h
        for i in range(0, n, 2):
            k1 = vel(i, pts)
            k2 = vel(i + 1, pts + 0.5 * h2 * k1)
            k3 = vel(i + 1, pts + 0.5 * h2 * k2)
            k4 = vel(i + 2, pts + h2 * k3)
            pts = pts + (h2 / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(pts)):
        raise IntegrationDivergedError(n)
    return pts


def path_energy(path: DiscretePath, k: GaussianKernel) -> float:
    """Trapezoidal quadrature of H along the path."""
    h_vals = hamiltonian(path.P, path.Q, path.d, k)
    trapezoid = getattr(np, "trapezoid", np.trapz)
    return float(trapezoid(h_vals, path.times))
