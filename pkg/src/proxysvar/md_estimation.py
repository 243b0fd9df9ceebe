"""Indirect minimum-distance estimation of the target rows A1 (or columns B1).

Moment conditions: A1 Sigma_u A1' = I_k and A1 Sigma_uw = 0, with vec(A1)
restricted linearly. The B-form uses B1 = Sigma_u A1' instead.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .linalg import commutation, duplication, duplication_pinv, vec, vech
from .optim import minimize_residual
from .proxy_model import ProxyMoments, RestrictionSet, split_sigma_plus
from .var_core import IrfPath, VarFit, irf_from_companion, irf_pi_jacobian


class IdentificationError(ValueError):
    pass


class RankConditionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MdOptions:
    gtol: float = 1e-9
    max_iter: int = 500
    restarts: int = 5
    seed: int = 0
    rank_tol: float = 1e-8
    weighting: str = "two-step"  # or "identity"


@dataclass(frozen=True)
class MdFit:
    alpha: np.ndarray
    A1: np.ndarray
    B1: np.ndarray
    V_alpha: Optional[np.ndarray]        # covariance of alpha_hat itself, already divided by T
    Q_min: float
    G_alpha: np.ndarray
    rank_ok: bool
    min_singular_value: float
    weighting: str
    converged: bool
    restrictions: RestrictionSet
    nobs: int
    V_alpha_reeval: Optional[np.ndarray] = None
    influence: Optional[np.ndarray] = field(default=None, repr=False)
    V_sigma_plus: Optional[np.ndarray] = field(default=None, repr=False)
    form: str = "A"

    @property
    def k(self) -> int:
        return self.A1.shape[0]

    def B1_covariance(self) -> np.ndarray:
        """Covariance of vec(B1_hat) (divided by T) via the delta method on sigma_plus."""
        if self.influence is None or self.V_sigma_plus is None:
            raise ValueError("fit carries no influence matrix or sigma_plus covariance")
        V = self.influence @ self.V_sigma_plus @ self.influence.T / self.nobs
        return 0.5 * (V + V.T)


def _dims(sigma_plus: np.ndarray, restrictions: RestrictionSet, form: str) -> tuple[int, int, int]:
    if form == "A":
        k, n = restrictions.shape
    else:
        n, k = restrictions.shape
    rest = len(sigma_plus) - n * (n + 1) // 2
    if rest < 0 or rest % n:
        raise ValueError("sigma_plus length is inconsistent with the restricted matrix")
    return n, k, rest // n


def moment_count(k: int, s: int) -> int:
    return k * (k + 1) // 2 + k * s


def check_order_condition(restrictions: RestrictionSet, k: int, n: int, s: int) -> None:
    m = moment_count(k, s)
    if restrictions.a > m:
        need = k * n - m
        raise IdentificationError(
            f"order condition fails: {restrictions.a} free parameters but only {m} moment "
            f"conditions; with k={k} at least ½k(k−1) = {k * (k - 1) // 2} restrictions are "
            f"required beyond normalization (here {need} fixed entries for s={s} proxies)")


def distance_g(sigma_plus: np.ndarray, alpha: np.ndarray, restrictions: RestrictionSet) -> np.ndarray:
    n, k, s = _dims(sigma_plus, restrictions, "A")
    Su, Suw = split_sigma_plus(sigma_plus, n, s)
    A1 = restrictions.matrix(alpha)
    return np.concatenate([vech(A1 @ Su @ A1.T - np.eye(k)), vec(A1 @ Suw)])


def jacobian_G_alpha(sigma_plus: np.ndarray, alpha: np.ndarray, restrictions: RestrictionSet) -> np.ndarray:
    n, k, s = _dims(sigma_plus, restrictions, "A")
    Su, Suw = split_sigma_plus(sigma_plus, n, s)
    A1 = restrictions.matrix(alpha)
    top = 2.0 * duplication_pinv(k) @ np.kron(A1 @ Su, np.eye(k))
    bottom = np.kron(Suw.T, np.eye(k))
    return np.vstack([top, bottom]) @ restrictions.S


def jacobian_G_sigma(alpha: np.ndarray, restrictions: RestrictionSet, s: int) -> np.ndarray:
    k, n = restrictions.shape
    A1 = restrictions.matrix(alpha)
    top = duplication_pinv(k) @ np.kron(A1, A1) @ duplication(n)
    bottom = np.kron(np.eye(s), A1)
    out = np.zeros((top.shape[0] + bottom.shape[0], top.shape[1] + bottom.shape[1]))
    out[:top.shape[0], :top.shape[1]] = top
    out[top.shape[0]:, top.shape[1]:] = bottom
    return out


def distance_g_Bform(sigma_plus: np.ndarray, beta: np.ndarray, restrictions: RestrictionSet) -> np.ndarray:
    n, k, s = _dims(sigma_plus, restrictions, "B")
    Su, Suw = split_sigma_plus(sigma_plus, n, s)
    B1 = restrictions.matrix(beta)
    MB = np.linalg.solve(Su, B1)
    return np.concatenate([vech(B1.T @ MB - np.eye(k)), vec(MB.T @ Suw)])


def jacobian_G_beta(sigma_plus: np.ndarray, beta: np.ndarray, restrictions: RestrictionSet) -> np.ndarray:
    n, k, s = _dims(sigma_plus, restrictions, "B")
    Su, Suw = split_sigma_plus(sigma_plus, n, s)
    B1 = restrictions.matrix(beta)
    M = np.linalg.inv(Su)
    BtM = B1.T @ M
    Om = M @ Suw
    top = 2.0 * duplication_pinv(k) @ np.kron(np.eye(k), BtM)
    bottom = np.kron(Om.T, np.eye(k)) @ commutation(n, k)
    return np.vstack([top, bottom]) @ restrictions.S


def jacobian_G_sigma_Bform(beta: np.ndarray, restrictions: RestrictionSet, Sigma_u: np.ndarray,
                           Sigma_uw: np.ndarray) -> np.ndarray:
    n, k = restrictions.shape
    s = Sigma_uw.shape[1]
    B1 = restrictions.matrix(beta)
    M = np.linalg.inv(Sigma_u)
    BtM = B1.T @ M
    Dn = duplication(n)
    top = np.hstack([-duplication_pinv(k) @ np.kron(BtM, BtM) @ Dn, np.zeros((k * (k + 1) // 2, n * s))])
    bottom = np.hstack([-np.kron(Sigma_uw.T @ M, BtM) @ Dn, np.kron(np.eye(s), BtM)])
    return np.vstack([top, bottom])


def _chol_factor(V: np.ndarray) -> np.ndarray:
    return np.linalg.cholesky(0.5 * (V + V.T))


def _two_step(g: Callable, G: Callable, Gs: Callable, x0: np.ndarray, normalize: Callable,
              V_sigma: Optional[np.ndarray], options: MdOptions):
    """Identity-weight step, then the efficient step weighted at the first solution."""
    r1 = minimize_residual(g, G, x0, options.gtol, options.max_iter, options.restarts, options.seed)
    x_bar = normalize(r1.x)
    if options.weighting == "identity" or V_sigma is None:
        return x_bar, x_bar, r1, None
    Gs_bar = Gs(x_bar)
    V_gg = Gs_bar @ V_sigma @ Gs_bar.T
    try:
        L = _chol_factor(V_gg)
    except np.linalg.LinAlgError:
        raise IdentificationError("weight matrix G_sigma V_sigma+ G_sigma' is singular")

    def rw(x):
        return np.linalg.solve(L, g(x))

    def jw(x):
        return np.linalg.solve(L, G(x))

    r2 = minimize_residual(rw, jw, x_bar, options.gtol, options.max_iter, options.restarts, options.seed + 1)
    return normalize(r2.x), x_bar, r2, V_gg


def _inference(G: np.ndarray, Gs: np.ndarray, V_gg: Optional[np.ndarray], nobs: int):
    if V_gg is None:
        W = np.eye(G.shape[0])
    else:
        W = np.linalg.inv(0.5 * (V_gg + V_gg.T))
    GWG = G.T @ W @ G
    try:
        GWG_inv = np.linalg.inv(GWG)
    except np.linalg.LinAlgError:
        return None, None
    influence = -GWG_inv @ G.T @ W @ Gs
    V = None if V_gg is None else GWG_inv / nobs
    return V, influence


def _rank_check(G: np.ndarray, tol: float) -> tuple[bool, float]:
    sv = np.linalg.svd(G, compute_uv=False)
    smin = float(sv[-1]) if len(sv) >= G.shape[1] else 0.0
    scale = max(float(sv[0]) if len(sv) else 0.0, 1.0)
    return bool(G.shape[1] <= G.shape[0] and smin > tol * scale), smin


def md_estimate(moments: ProxyMoments, restrictions: RestrictionSet,
                options: MdOptions = MdOptions()) -> MdFit:
    """Two-step indirect-MD estimate of A1 from (Sigma_u, Sigma_uw)."""
    k, n = restrictions.shape
    if n != moments.n:
        raise ValueError(f"restrictions cover {n} variables, moments have {moments.n}")
    s = moments.s
    check_order_condition(restrictions, k, n, s)
    if options.weighting != "identity" and moments.V_sigma_plus is None:
        raise ValueError("two-step weighting needs V_sigma_plus on the moments")
    sp = moments.sigma_plus
    Su = moments.Sigma_u

    L = np.linalg.cholesky(Su)
    A0 = np.linalg.inv(L)[:k]
    x0 = restrictions.params_from_matrix(A0)

    def normalize(x):
        A1 = restrictions.matrix(x)
        d = np.sign(np.diag((Su @ A1.T)[:k, :k]))
        d[d == 0] = 1.0
        flipped = d[:, None] * A1
        if np.all(d > 0) or not restrictions.satisfied_by(flipped):
            return x
        return restrictions.params_from_matrix(flipped)

    g = lambda x: distance_g(sp, x, restrictions)
    G = lambda x: jacobian_G_alpha(sp, x, restrictions)
    Gs = lambda x: jacobian_G_sigma(x, restrictions, s)
    alpha, alpha_bar, res, V_gg = _two_step(g, G, Gs, x0, normalize, moments.V_sigma_plus, options)

    A1 = restrictions.matrix(alpha)
    B1 = Su @ A1.T
    G_hat = G(alpha)
    rank_ok, smin = _rank_check(G_hat, options.rank_tol)
    if not rank_ok:
        warnings.warn(f"rank condition fails at the estimate (smallest singular value {smin:.3g})",
                      RankConditionWarning, stacklevel=2)
    V_alpha = V_re = influence = None
    if rank_ok:
        V_alpha, infl_a = _inference(G_hat, Gs(alpha), V_gg, moments.nobs)
        if V_gg is not None:
            Gs_hat = Gs(alpha)
            V_re, _ = _inference(G_hat, Gs_hat, Gs_hat @ moments.V_sigma_plus @ Gs_hat.T, moments.nobs)
        if infl_a is not None:
            # vec(B1) = (A1 (x) I_n) D_n vech(Sigma_u) + (I_k (x) Sigma_u) K_{k,n} vec(A1)
            dB_dsig = np.zeros((n * k, len(sp)))
            dB_dsig[:, :n * (n + 1) // 2] = np.kron(A1, np.eye(n)) @ duplication(n)
            dB_dalpha = np.kron(np.eye(k), Su) @ commutation(k, n) @ restrictions.S
            influence = dB_dsig + dB_dalpha @ infl_a
    q = float(res.objective)
    return MdFit(alpha=alpha, A1=A1, B1=B1, V_alpha=V_alpha, Q_min=q, G_alpha=G_hat,
                 rank_ok=rank_ok, min_singular_value=smin,
                 weighting="identity" if V_gg is None else "two-step V_gg(step-1 alpha)",
                 converged=res.converged, restrictions=restrictions, nobs=moments.nobs,
                 V_alpha_reeval=V_re, influence=influence, V_sigma_plus=moments.V_sigma_plus, form="A")


def map_restrictions_to_Bform(restrictions: RestrictionSet, Sigma_u: np.ndarray) -> RestrictionSet:
    """Express restrictions on A1 as restrictions on B1 = Sigma_u A1'.

    vec(B1) = (I_k kron Sigma_u) K_{k,n} vec(A1), so the mapped set carries
    the same parameters and describes the same model for this Sigma_u.
    """
    if restrictions.target != "A1":
        raise ValueError("restrictions must refer to A1")
    k, n = restrictions.shape
    T = np.kron(np.eye(k), Sigma_u) @ commutation(k, n)
    return RestrictionSet((n, k), T @ restrictions.S, T @ restrictions.shift, restrictions.names, "B1")


def md_estimate_Bform(moments: ProxyMoments, restrictions: RestrictionSet,
                      options: MdOptions = MdOptions()) -> MdFit:
    """Two-step MD estimate parametrized by the impact columns B1 (n x k)."""
    n, k = restrictions.shape
    if n != moments.n:
        raise ValueError(f"restrictions cover {n} variables, moments have {moments.n}")
    s = moments.s
    check_order_condition(restrictions, k, n, s)
    if options.weighting != "identity" and moments.V_sigma_plus is None:
        raise ValueError("two-step weighting needs V_sigma_plus on the moments")
    sp = moments.sigma_plus
    Su, Suw = moments.Sigma_u, moments.Sigma_uw
    x0 = restrictions.params_from_matrix(np.linalg.cholesky(Su)[:, :k])

    def normalize(x):
        B1 = restrictions.matrix(x)
        d = np.sign(np.diag(B1[:k, :k]))
        d[d == 0] = 1.0
        flipped = B1 * d[None, :]
        if np.all(d > 0) or not restrictions.satisfied_by(flipped):
            return x
        return restrictions.params_from_matrix(flipped)

    g = lambda x: distance_g_Bform(sp, x, restrictions)
    G = lambda x: jacobian_G_beta(sp, x, restrictions)
    Gs = lambda x: jacobian_G_sigma_Bform(x, restrictions, Su, Suw)
    beta, _, res, V_gg = _two_step(g, G, Gs, x0, normalize, moments.V_sigma_plus, options)
    B1 = restrictions.matrix(beta)
    A1 = np.linalg.solve(Su, B1).T
    G_hat = G(beta)
    rank_ok, smin = _rank_check(G_hat, options.rank_tol)
    if not rank_ok:
        warnings.warn(f"rank condition fails at the estimate (smallest singular value {smin:.3g})",
                      RankConditionWarning, stacklevel=2)
    V_beta = influence = None
    if rank_ok:
        V_beta, infl = _inference(G_hat, Gs(beta), V_gg, moments.nobs)
        if infl is not None:
            influence = restrictions.S @ infl
    return MdFit(alpha=beta, A1=A1, B1=B1, V_alpha=V_beta, Q_min=float(res.objective), G_alpha=G_hat,
                 rank_ok=rank_ok, min_singular_value=smin,
                 weighting="identity" if V_gg is None else "two-step V_gg(step-1 beta)",
                 converged=res.converged, restrictions=restrictions, nobs=moments.nobs,
                 influence=influence, V_sigma_plus=moments.V_sigma_plus, form="B")


def iv_estimate_psi(u1: np.ndarray, u2: np.ndarray, w: np.ndarray,
                    min_canonical_corr: float = 1e-6) -> np.ndarray:
    """IV coefficients Psi in u1 = Psi u2 + error, instrumenting u2 with w.

    Raises when the instrument-regressor cross-moment is (near) singular,
    measured by the smallest canonical correlation between w and u2.
    """
    u1 = np.atleast_2d(np.asarray(u1, dtype=float).T).T
    u2 = np.atleast_2d(np.asarray(u2, dtype=float).T).T
    w = np.atleast_2d(np.asarray(w, dtype=float).T).T
    if w.shape[1] != u2.shape[1]:
        raise ValueError(f"need as many instruments ({w.shape[1]}) as regressors ({u2.shape[1]})")
    Wq = np.linalg.qr(w - w.mean(axis=0))[0]
    Uq = np.linalg.qr(u2 - u2.mean(axis=0))[0]
    cc = np.linalg.svd(Wq.T @ Uq, compute_uv=False)
    if cc.min() < min_canonical_corr:
        raise np.linalg.LinAlgError(
            f"instrument-regressor cross-moment is near singular (canonical correlation {cc.min():.2e})")
    return np.linalg.solve(w.T @ u2, w.T @ u1).T


def delta_method_irf_ci(fit: MdFit, var_fit: VarFit, level: float = 0.90, h_max: int = 12,
                        shock: int = 0) -> IrfPath:
    """Pointwise normal bands for the responses to target shock ``shock``.

    The variance combines the VAR slope block Sigma_u (x) (Z'Z)^{-1} with the
    delta-method covariance of vec(B1) from the MD fit; the cross block
    between the two is set to zero.
    """
    if not fit.rank_ok or fit.influence is None:
        raise IdentificationError("delta-method bands need a fit that passes the rank condition")
    n = var_fit.n
    C = var_fit.companion
    b = fit.B1[:, shock]
    vals = irf_from_companion(C, n, b, h_max)
    Jpi = irf_pi_jacobian(C, n, b, h_max)
    Vpi = var_fit.pi_covariance()
    VB = fit.B1_covariance()[shock * n:(shock + 1) * n, shock * n:(shock + 1) * n]
    nl = C.shape[0]
    P = np.eye(nl)
    se = np.empty_like(vals)
    for h in range(h_max + 1):
        Phi = P[:n, :n]
        V = Jpi[h] @ Vpi @ Jpi[h].T + Phi @ VB @ Phi.T
        d = np.diag(V)
        if not np.all(np.isfinite(d)):
            raise FloatingPointError("non-finite response variance")
        se[h] = np.sqrt(np.maximum(d, 0.0))
        P = C @ P
    z = stats.norm.ppf(0.5 + level / 2.0)
    return IrfPath(values=vals, shock=shock, lower=vals - z * se, upper=vals + z * se, level=level)
