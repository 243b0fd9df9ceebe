"""Classical minimum-distance estimation of proxy strength parameters.

theta = (beta2', lambda')' collects the free entries of the non-target
impact block B2 (n x s) and of the relevance matrix Lambda (s x s); the
model maps theta to f(theta) = (vech(Lambda Lambda')', vec(Lambda B2')')'.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linalg import commutation, duplication_pinv, inv_sqrt_psd, vec, vech
from .md_estimation import IdentificationError
from .optim import minimize_residual
from .proxy_model import ProxyMoments, RestrictionSet, build_restrictions


@dataclass(frozen=True)
class ThetaRestrictions:
    beta2: RestrictionSet
    lam: RestrictionSet

    def __post_init__(self):
        n, s = self.beta2.shape
        if self.lam.shape != (s, s):
            raise ValueError(f"Lambda restrictions must be {s}x{s}, got {self.lam.shape}")
        o = s * (s + 1) // 2 + n * s
        if self.q > o:
            raise IdentificationError(
                f"order condition fails for theta: {self.q} free parameters, {o} moments; "
                f"at least ½s(s−1) = {s * (s - 1) // 2} restrictions on Lambda and B2 are required")

    @property
    def n(self) -> int:
        return self.beta2.shape[0]

    @property
    def s(self) -> int:
        return self.beta2.shape[1]

    @property
    def q(self) -> int:
        return self.beta2.a + self.lam.a

    def split(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (B2, Lambda)."""
        a = self.beta2.a
        return self.beta2.matrix(theta[:a]), self.lam.matrix(theta[a:])

    def join(self, B2: np.ndarray, Lam: np.ndarray) -> np.ndarray:
        return np.concatenate([self.beta2.params_from_matrix(B2), self.lam.params_from_matrix(Lam)])

    @classmethod
    def default(cls, n: int, s: int) -> "ThetaRestrictions":
        """B2 unrestricted, Lambda lower triangular."""
        b = RestrictionSet.free(n, s, "B2", "b")
        pattern = [[f"l{i + 1}_{j + 1}" if j <= i else 0.0 for j in range(s)] for i in range(s)]
        return cls(b, build_restrictions(pattern, "Lambda"))


def f_theta(theta: np.ndarray, restrictions: ThetaRestrictions) -> np.ndarray:
    B2, Lam = restrictions.split(np.asarray(theta, dtype=float))
    return np.concatenate([vech(Lam @ Lam.T), vec(Lam @ B2.T)])


def jacobian_J_theta(theta: np.ndarray, restrictions: ThetaRestrictions) -> np.ndarray:
    B2, Lam = restrictions.split(np.asarray(theta, dtype=float))
    n, s = B2.shape
    Is = np.eye(s)
    top = np.hstack([np.zeros((s * (s + 1) // 2, n * s)),
                     2.0 * duplication_pinv(s) @ np.kron(Lam, Is)])
    bottom = np.hstack([np.kron(np.eye(n), Lam) @ commutation(n, s), np.kron(B2, Is)])
    sel = np.zeros((n * s + s * s, restrictions.q))
    sel[:n * s, :restrictions.beta2.a] = restrictions.beta2.S
    sel[n * s:, restrictions.beta2.a:] = restrictions.lam.S
    return np.vstack([top, bottom]) @ sel


@dataclass(frozen=True)
class CmdOptions:
    gtol: float = 1e-9
    max_iter: int = 500
    restarts: int = 5
    seed: int = 0


@dataclass(frozen=True)
class ThetaFit:
    theta: np.ndarray
    beta2: np.ndarray
    lam: np.ndarray
    B2: np.ndarray
    Lambda: np.ndarray
    V_theta: Optional[np.ndarray]  # covariance of sqrt(T) theta_hat
    J_theta: np.ndarray
    Q_min: float
    converged: bool
    nobs: int
    restrictions: ThetaRestrictions = field(repr=False)
    Gamma: Optional[np.ndarray] = None


def initial_theta(Omega_w: np.ndarray, Sigma_uw: np.ndarray, restrictions: ThetaRestrictions) -> np.ndarray:
    """Cholesky start: Lambda0 = chol(Omega_w), B2_0 = Sigma_uw Lambda0^{-T}."""
    try:
        L0 = np.linalg.cholesky(0.5 * (Omega_w + Omega_w.T))
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(0.5 * (Omega_w + Omega_w.T))
        L0 = np.linalg.cholesky((v * np.maximum(w, 1e-12)) @ v.T)
    lam0 = restrictions.lam.params_from_matrix(L0)
    Lr = restrictions.lam.matrix(lam0)
    B0 = np.linalg.lstsq(Lr, Sigma_uw.T, rcond=None)[0].T
    return np.concatenate([restrictions.beta2.params_from_matrix(B0), lam0])


def normalize_theta(theta: np.ndarray, restrictions: ThetaRestrictions) -> np.ndarray:
    """Flip column signs so that diag(Lambda) >= 0 where the pattern allows."""
    B2, Lam = restrictions.split(theta)
    d = np.sign(np.diag(Lam))
    d[d == 0] = 1.0
    if np.all(d > 0):
        return theta
    B2f, Lf = B2 * d[None, :], Lam * d[None, :]
    if restrictions.beta2.satisfied_by(B2f) and restrictions.lam.satisfied_by(Lf):
        return restrictions.join(B2f, Lf)
    return theta


def weight_factor(V_mu: np.ndarray) -> np.ndarray:
    V = 0.5 * (V_mu + V_mu.T)
    try:
        return np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("V_mu is singular; the CMD weight is undefined")


def solve_theta(mu: np.ndarray, L: np.ndarray, restrictions: ThetaRestrictions, x0: np.ndarray,
                options: CmdOptions):
    def r(x):
        return np.linalg.solve(L, mu - f_theta(x, restrictions))

    def j(x):
        return -np.linalg.solve(L, jacobian_J_theta(x, restrictions))

    res = minimize_residual(r, j, x0, options.gtol, options.max_iter, options.restarts, options.seed)
    return normalize_theta(res.x, restrictions), res


def cmd_estimate(moments: ProxyMoments, restrictions: Optional[ThetaRestrictions] = None,
                 options: CmdOptions = CmdOptions(), theta0: Optional[np.ndarray] = None) -> ThetaFit:
    """Minimize (mu - f(theta))' V_mu^{-1} (mu - f(theta))."""
    if restrictions is None:
        restrictions = ThetaRestrictions.default(moments.n, moments.s)
    V_mu = moments.V_mu
    if V_mu is None:
        raise ValueError("CMD estimation needs V_sigma_plus on the moments")
    L = weight_factor(V_mu)
    x0 = initial_theta(moments.Omega_w, moments.Sigma_uw, restrictions)
    theta, res = solve_theta(moments.mu, L, restrictions, x0, options)
    J = jacobian_J_theta(theta, restrictions)
    Winv_J = np.linalg.solve(L, J)
    try:
        V_theta = np.linalg.inv(Winv_J.T @ Winv_J)
        V_theta = 0.5 * (V_theta + V_theta.T)
    except np.linalg.LinAlgError:
        V_theta = None
    B2, Lam = restrictions.split(theta)
    a = restrictions.beta2.a
    Gamma = None
    if theta0 is not None and V_theta is not None:
        Gamma = np.sqrt(moments.nobs) * inv_sqrt_psd(V_theta) @ (theta - np.asarray(theta0, dtype=float))
    return ThetaFit(theta=theta, beta2=theta[:a], lam=theta[a:], B2=B2, Lambda=Lam, V_theta=V_theta,
                    J_theta=J, Q_min=float(res.objective), converged=res.converged,
                    nobs=moments.nobs, restrictions=restrictions, Gamma=Gamma)
