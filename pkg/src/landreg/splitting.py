"""Operator-splitting priors: MAP registration, landmark-set averages, and
Laplace/Gauss-Newton posterior covariances.

Objectives mix analytic derivatives (Hamiltonian and quadratic data terms)
with finite-difference Jacobians of the flow map, computed as batched flows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .flow import FlowSettings, flow_endpoint, shoot_register
from .kernel import (
    GaussianKernel,
    LandmarkConfig,
    ThermostatParams,
    grad_hamiltonian,
    hamiltonian,
    hess_hamiltonian,
    kernel_matrix,
)
from .numerics import lbfgs_minimise, psd_project, spectral_decomp

__all__ = [
    "RegistrationData",
    "FirstSplitMAP",
    "SecondSplitMAP",
    "MultiSetMAP",
    "objective_first",
    "map_first",
    "laplace_first",
    "matrix_exp_kernel",
    "objective_second",
    "map_second",
    "laplace_second",
    "objective_multi",
    "map_multi",
    "laplace_multi",
    "laplace_generic",
]

_FD_STEP = 1e-6


@dataclass(frozen=True)
class RegistrationData:
    """Reference/target landmark pair with matching (d, N)."""

    q_r: LandmarkConfig
    q_t: LandmarkConfig

    def __post_init__(self):
        if self.q_r.d != self.q_t.d or self.q_r.n != self.q_t.n:
            raise ValueError("reference and target must share (d, N)")

    @property
    def d(self) -> int:
        return self.q_r.d

    @property
    def dn(self) -> int:
        return self.q_r.q.size


def _flow_jacobian(p0, q0, t_to, settings, k, d):
    """Endpoint positions S_q(t_to; 0, [p0, q0]) and Jacobian wrt (p0, q0).

    Central finite differences, all perturbed flows in one batch.
    Returns (q_end (dN,), jac (dN, 2dN)).
    """
    dn = p0.size
    z0 = np.concatenate([p0, q0])
    eye = np.eye(2 * dn)
    zs = np.vstack([z0[None] + _FD_STEP * eye, z0[None] - _FD_STEP * eye, z0[None]])
    _, q_end = flow_endpoint(zs[:, :dn], zs[:, dn:], 0.0, t_to, settings, k, d)
    jac = (q_end[:2 * dn] - q_end[2 * dn:4 * dn]).T / (2.0 * _FD_STEP)
    return q_end[-1], jac


def objective_first(
    p0: np.ndarray,
    q0: np.ndarray,
    data: RegistrationData,
    beta: float,
    delta2_obs: float,
    settings: FlowSettings,
    k: GaussianKernel,
):
    """First-splitting MAP objective and its gradient.

    F = beta H(p0, q0) + (1/2 delta^2)(||q_r - q0||^2 + ||q_t - S_q(1)||^2).
    """
    d = data.d
    p0 = np.asarray(p0, float).ravel()
    q0 = np.asarray(q0, float).ravel()
    h_val = float(hamiltonian(p0, q0, d, k))
    gp, gq = grad_hamiltonian(p0, q0, d, k)
    q_end, jac = _flow_jacobian(p0, q0, 1.0, settings, k, d)
    r0 = q0 - data.q_r.q
    r1 = q_end - data.q_t.q
    value = beta * h_val + 0.5 / delta2_obs * (float(r0 @ r0) + float(r1 @ r1))
    grad = np.concatenate([beta * gp, beta * gq])
    grad[p0.size:] += r0 / delta2_obs
    grad += (jac.T @ r1) / delta2_obs
    return value, grad


@dataclass
class FirstSplitMAP:
    p0: np.ndarray
    q0: np.ndarray
    objective_value: float
    converged: bool
    grad_norm: float
    residual_ref: float
    residual_tgt: float
    laplace_cov: np.ndarray | None = None


def map_first(
    data: RegistrationData,
    beta: float,
    delta2_obs: float,
    settings: FlowSettings,
    k: GaussianKernel,
    gtol_rel: float = 1e-6,
    max_iter: int = 500,
) -> FirstSplitMAP:
    """Minimise the first-splitting objective over (p0, q0).

    Initialised at the exact-data registration point: q0 = q_r and the
    shooting momentum between the (noisy) landmarks.
    """
    d, dn = data.d, data.dn
    shoot = shoot_register(data.q_r, data.q_t, settings, k, tol=10 * np.sqrt(delta2_obs))
    x0 = np.concatenate([shoot.p0, data.q_r.q])

    def fg(x):
        return objective_first(x[:dn], x[dn:], data, beta, delta2_obs, settings, k)

    res = lbfgs_minimise(fg, x0, gtol=gtol_rel, max_iter=max_iter)
    # converged means grad norm below gtol_rel * max(1, |F|)
    target = gtol_rel * max(1.0, abs(res.value))
    if res.grad_norm > target:
        res = lbfgs_minimise(fg, res.x, gtol=target, max_iter=max_iter)
    p0, q0 = res.x[:dn], res.x[dn:]
    _, q_end = flow_endpoint(p0, q0, 0.0, 1.0, settings, k, d)
    return FirstSplitMAP(
        p0=p0,
        q0=q0,
        objective_value=res.value,
        converged=res.grad_norm <= target,
        grad_norm=res.grad_norm,
        residual_ref=float(np.linalg.norm(q0 - data.q_r.q)),
        residual_tgt=float(np.linalg.norm(q_end - data.q_t.q)),
    )


def laplace_generic(hess_gn: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Covariance from a Gauss-Newton Hessian surrogate.

    Spectral decomposition, negative/small eigenvalues dropped, pseudo-inverse
    on the retained spectrum; symmetric PSD by construction.
    """
    return psd_project(0.5 * (hess_gn + hess_gn.T), rel_tol=rel_tol, pinv=True)


def laplace_first(
    map_point: FirstSplitMAP,
    data: RegistrationData,
    beta: float,
    delta2_obs: float,
    settings: FlowSettings,
    k: GaussianKernel,
) -> np.ndarray:
    """Laplace covariance over (p0, q0) at the first-splitting MAP point."""
    d, dn = data.d, data.dn
    hess = beta * hess_hamiltonian(map_point.p0, map_point.q0, d, k)
    _, jac = _flow_jacobian(map_point.p0, map_point.q0, 1.0, settings, k, d)
    block = np.zeros((2 * dn, 2 * dn))
    block[dn:, dn:] = np.eye(dn)
    hess = hess + (block + jac.T @ jac) / delta2_obs
    return laplace_generic(hess)


def matrix_exp_kernel(q: LandmarkConfig, lam: float, k: GaussianKernel):
    """exp(-lam G(q)) via the spectral decomposition of the kernel matrix."""
    g = kernel_matrix(q, k)
    dec = spectral_decomp(g)
    u = dec.eigenvectors
    e = (u * np.exp(-lam * dec.eigenvalues)) @ u.T
    return 0.5 * (e + e.T)


def matrix_exp_kernel_dir(q: LandmarkConfig, lam: float, k: GaussianKernel, dq: np.ndarray):
    """Directional derivative of q -> exp(-lam G(q)) along dq, by central FD."""
    dq = np.asarray(dq, float).ravel()
    step = _FD_STEP
    e_plus = matrix_exp_kernel(LandmarkConfig(d=q.d, q=q.q + step * dq), lam, k)
    e_minus = matrix_exp_kernel(LandmarkConfig(d=q.d, q=q.q - step * dq), lam, k)
    return (e_plus - e_minus) / (2.0 * step)


def _apply_kron(mat_n: np.ndarray, vec: np.ndarray, d: int) -> np.ndarray:
    """(mat_n (x) I_d) vec without materialising the Kronecker product."""
    n = mat_n.shape[0]
    return (mat_n @ vec.reshape(n, d)).ravel()


def _coupling_q_grad(q_half, lam, k, d, ph, resid, weight):
    """Gradient wrt q of weight * ||resid_term|| coupling, by per-coordinate FD
    of the matrix exponential."""
    dn = q_half.size
    grad = np.empty(dn)
    cfg = LandmarkConfig(d=d, q=q_half)
    for i in range(dn):
        e_dir = matrix_exp_kernel_dir(cfg, lam, k, np.eye(dn)[i])
        grad[i] = -2.0 * weight * float(resid @ _apply_kron(e_dir, ph, d))
    return grad


def objective_second(
    p_half: np.ndarray,
    q_half: np.ndarray,
    p_tilde: np.ndarray,
    data: RegistrationData,
    th: ThermostatParams,
    delta2_obs: float,
    settings: FlowSettings,
    k: GaussianKernel,
):
    """Second-splitting objective and gradient over (p_1/2, q_1/2, p~_1/2).

    F = beta H + (beta/4 lam) ||p~ - (exp(-lam G(q)) (x) I_d) p||^2
      + (1/2 delta^2)(||q_r - S_q(1/2; 0, [-p, q])||^2
                      + ||q_t - S_q(1/2; 0, [p~, q])||^2).
    """
    if not (th.lam > 0):
        raise InvalidParameterError("second splitting requires lam > 0")
    d = data.d
    p_half = np.asarray(p_half, float).ravel()
    q_half = np.asarray(q_half, float).ravel()
    p_tilde = np.asarray(p_tilde, float).ravel()
    dn = p_half.size
    beta, lam = th.beta, th.lam
    w_c = beta / (4.0 * lam)

    h_val = float(hamiltonian(p_half, q_half, d, k))
    gp, gq = grad_hamiltonian(p_half, q_half, d, k)

    e_mat = matrix_exp_kernel(LandmarkConfig(d=d, q=q_half), lam, k)
    resid_c = p_tilde - _apply_kron(e_mat, p_half, d)

    qa, jac_a = _flow_jacobian(-p_half, q_half, 0.5, settings, k, d)
    qb, jac_b = _flow_jacobian(p_tilde, q_half, 0.5, settings, k, d)
    r_a = qa - data.q_r.q
    r_b = qb - data.q_t.q

    value = (beta * h_val + w_c * float(resid_c @ resid_c)
             + 0.5 / delta2_obs * (float(r_a @ r_a) + float(r_b @ r_b)))

    g_p = beta * gp - 2.0 * w_c * _apply_kron(e_mat, resid_c, d)
    g_q = beta * gq + _coupling_q_grad(q_half, lam, k, d, p_half, resid_c, w_c)
    g_pt = 2.0 * w_c * resid_c

    ga = (jac_a.T @ r_a) / delta2_obs  # wrt (-p_half, q_half)
    g_p += -ga[:dn]
    g_q += ga[dn:]
    gb = (jac_b.T @ r_b) / delta2_obs  # wrt (p_tilde, q_half)
    g_pt += gb[:dn]
    g_q += gb[dn:]

    return value, np.concatenate([g_p, g_q, g_pt])


@dataclass
class SecondSplitMAP:
    p_half: np.ndarray
    q_half: np.ndarray
    p_tilde: np.ndarray
    objective_value: float
    converged: bool
    grad_norm: float
    laplace_cov: np.ndarray | None = None

    @property
    def average(self) -> np.ndarray:
        return self.q_half


def map_second(
    data: RegistrationData,
    th: ThermostatParams,
    delta2_obs: float,
    settings: FlowSettings,
    k: GaussianKernel,
    gtol_rel: float = 1e-6,
    max_iter: int = 500,
) -> SecondSplitMAP:
    """Minimise the second-splitting objective from the arithmetic-midpoint
    initialisation (zero momenta, q = (q_r + q_t)/2)."""
    dn = data.dn
    x0 = np.concatenate([np.zeros(dn), 0.5 * (data.q_r.q + data.q_t.q), np.zeros(dn)])

    def fg(x):
        return objective_second(x[:dn], x[dn:2 * dn], x[2 * dn:], data, th,
                                delta2_obs, settings, k)

    res = lbfgs_minimise(fg, x0, gtol=gtol_rel, max_iter=max_iter)
    target = gtol_rel * max(1.0, abs(res.value))
    if res.grad_norm > target:
        res = lbfgs_minimise(fg, res.x, gtol=target, max_iter=max_iter)
    return SecondSplitMAP(
        p_half=res.x[:dn],
        q_half=res.x[dn:2 * dn],
        p_tilde=res.x[2 * dn:],
        objective_value=res.value,
        converged=res.grad_norm <= target,
        grad_norm=res.grad_norm,
    )


def laplace_second(
    map_point: SecondSplitMAP,
    data: RegistrationData,
    th: ThermostatParams,
    delta2_obs: float,
    settings: FlowSettings,
    k: GaussianKernel,
) -> np.ndarray:
    """Gauss-Newton Laplace covariance over (p_1/2, q_1/2, p~_1/2)."""
    d, dn = data.d, data.dn
    beta, lam = th.beta, th.lam
    m = 3 * dn
    hess = np.zeros((m, m))
    hess[:2 * dn, :2 * dn] = beta * hess_hamiltonian(
        map_point.p_half, map_point.q_half, d, k)

    # Coupling residual c = p~ - (E (x) I_d) p; GN term 2*(beta/4lam) Jc^T Jc.
    e_mat = matrix_exp_kernel(LandmarkConfig(d=d, q=map_point.q_half), lam, k)
    jc = np.zeros((dn, m))
    jc[:, 2 * dn:] = np.eye(dn)
    jc[:, :dn] = -np.kron(e_mat, np.eye(d))
    cfg = LandmarkConfig(d=d, q=map_point.q_half)
    for i in range(dn):
        e_dir = matrix_exp_kernel_dir(cfg, lam, k, np.eye(dn)[i])
        jc[:, dn + i] = -_apply_kron(e_dir, map_point.p_half, d)
    hess += (beta / (2.0 * lam)) * jc.T @ jc

    _, jac_a = _flow_jacobian(-map_point.p_half, map_point.q_half, 0.5, settings, k, d)
    _, jac_b = _flow_jacobian(map_point.p_tilde, map_point.q_half, 0.5, settings, k, d)
    ja = np.zeros((dn, m))
    ja[:, :dn] = -jac_a[:, :dn]
    ja[:, dn:2 * dn] = jac_a[:, dn:]
    jb = np.zeros((dn, m))
    jb[:, 2 * dn:] = jac_b[:, :dn]
    jb[:, dn:2 * dn] = jac_b[:, dn:]
    hess += (ja.T @ ja + jb.T @ jb) / delta2_obs
    return laplace_generic(hess)


def objective_multi(
    p_star: np.ndarray,
    q_star: np.ndarray,
    p_list: np.ndarray,
    data_list: list[LandmarkConfig],
    th: ThermostatParams,
    delta2_obs: float,
    settings: FlowSettings,
    k: GaussianKernel,
):
    """Multi-set average objective and gradient over (p*, q*, p^1..p^J).

    F = beta H(p*, q*) + (beta/4 lam) sum_j ||p^j - (exp(-lam G(q*)) (x) I) p*||^2
      + (1/2 delta^2) sum_j ||q^j - S_q(1/2; 0, [p^j, q*])||^2.
    """
    if not (th.lam > 0):
        raise InvalidParameterError("multi-set averaging requires lam > 0")
    j_sets = len(data_list)
    if j_sets < 2:
        raise InvalidParameterError("need at least two landmark sets")
    d = data_list[0].d
    p_star = np.asarray(p_star, float).ravel()
    q_star = np.asarray(q_star, float).ravel()
    dn = p_star.size
    p_list = np.asarray(p_list, float).reshape(j_sets, dn)
    beta, lam = th.beta, th.lam
    w_c = beta / (4.0 * lam)

    h_val = float(hamiltonian(p_star, q_star, d, k))
    gp, gq = grad_hamiltonian(p_star, q_star, d, k)
    e_mat = matrix_exp_kernel(LandmarkConfig(d=d, q=q_star), lam, k)
    ep_star = _apply_kron(e_mat, p_star, d)

    value = beta * h_val
    g_pstar = beta * gp
    g_qstar = beta * gq
    g_pj = np.zeros_like(p_list)

    resid_sum = np.zeros(dn)
    for j in range(j_sets):
        resid = p_list[j] - ep_star
        value += w_c * float(resid @ resid)
        g_pj[j] += 2.0 * w_c * resid
        g_pstar += -2.0 * w_c * _apply_kron(e_mat, resid, d)
        resid_sum += resid
    g_qstar += _coupling_q_grad(q_star, lam, k, d, p_star, resid_sum, w_c)

    for j in range(j_sets):
        q_end, jac = _flow_jacobian(p_list[j], q_star, 0.5, settings, k, d)
        r = q_end - data_list[j].q
        value += 0.5 / delta2_obs * float(r @ r)
        g = (jac.T @ r) / delta2_obs
        g_pj[j] += g[:dn]
        g_qstar += g[dn:]

    return value, np.concatenate([g_pstar, g_qstar, g_pj.ravel()])


@dataclass
class MultiSetMAP:
    p_star: np.ndarray
    q_star: np.ndarray
    p_sets: np.ndarray  # (J, dN)
    objective_value: float
    converged: bool
    grad_norm: float
    laplace_cov: np.ndarray | None = None

    @property
    def average(self) -> np.ndarray:
        return self.q_star


def map_multi(
    data_list: list[LandmarkConfig],
    th: ThermostatParams,
    delta2_obs: float,
    settings: FlowSettings,
    k: GaussianKernel,
    gtol_rel: float = 1e-6,
    max_iter: int = 500,
) -> MultiSetMAP:
    """Minimise the multi-set objective from the arithmetic mean with zero momenta."""
    j_sets = len(data_list)
    if j_sets < 2:
        raise InvalidParameterError("need at least two landmark sets")
    dn = data_list[0].q.size
    q_init = np.mean([c.q for c in data_list], axis=0)
    x0 = np.concatenate([np.zeros(dn), q_init, np.zeros(j_sets * dn)])

    def fg(x):
        return objective_multi(x[:dn], x[dn:2 * dn], x[2 * dn:], data_list, th,
                               delta2_obs, settings, k)

    res = lbfgs_minimise(fg, x0, gtol=gtol_rel, max_iter=max_iter)
    target = gtol_rel * max(1.0, abs(res.value))
    if res.grad_norm > target:
        res = lbfgs_minimise(fg, res.x, gtol=target, max_iter=max_iter)
    return MultiSetMAP(
        p_star=res.x[:dn],
        q_star=res.x[dn:2 * dn],
        p_sets=res.x[2 * dn:].reshape(j_sets, dn),
        objective_value=res.value,
        converged=res.grad_norm <= target,
        grad_norm=res.grad_norm,
    )


def laplace_multi(
    map_point: MultiSetMAP,
    data_list: list[LandmarkConfig],
    th: ThermostatParams,
    delta2_obs: float,
    settings: FlowSettings,
    k: GaussianKernel,
) -> np.ndarray:
    """Gauss-Newton Laplace covariance over (p*, q*, p^1..p^J)."""
    j_sets = len(data_list)
    d = data_list[0].d
    dn = map_point.p_star.size
    m = (2 + j_sets) * dn
    beta, lam = th.beta, th.lam
    hess = np.zeros((m, m))
    hess[:2 * dn, :2 * dn] = beta * hess_hamiltonian(
        map_point.p_star, map_point.q_star, d, k)

    cfg = LandmarkConfig(d=d, q=map_point.q_star)
    e_mat = matrix_exp_kernel(cfg, lam, k)
    e_kron = np.kron(e_mat, np.eye(d))
    de_p = np.empty((dn, dn))  # column i: d/dq_i of (E (x) I) p*
    for i in range(dn):
        e_dir = matrix_exp_kernel_dir(cfg, lam, k, np.eye(dn)[i])
        de_p[:, i] = _apply_kron(e_dir, map_point.p_star, d)

    for j in range(j_sets):
        jc = np.zeros((dn, m))
        jc[:, :dn] = -e_kron
        jc[:, dn:2 * dn] = -de_p
        jc[:, (2 + j) * dn:(3 + j) * dn] = np.eye(dn)
        hess += (beta / (2.0 * lam)) * jc.T @ jc

        _, jac = _flow_jacobian(map_point.p_sets[j], map_point.q_star, 0.5, settings, k, d)
        jd = np.zeros((dn, m))
        jd[:, (2 + j) * dn:(3 + j) * dn] = jac[:, :dn]
        jd[:, dn:2 * dn] = jac[:, dn:]
        hess += jd.T @ jd / delta2_obs
    return laplace_generic(hess)


def average_marginal_sds(cov: np.ndarray, dn: int, q_block_start: int = None) -> np.ndarray:
    """Per-coordinate standard deviations of the average landmark block.

    For both splitting covariances the q block sits at offset dN.
    """
    start = dn if q_block_start is None else q_block_start
    return np.sqrt(np.clip(np.diag(cov)[start:start + dn], 0.0, None))
