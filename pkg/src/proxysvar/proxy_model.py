"""Proxy moments, their Jacobian and linear restriction patterns.

Stacking orders used throughout the package:

* ``sigma_plus = (vech(Sigma_u)', vec(Sigma_uw)')'`` of length n(n+1)/2 + ns
* ``mu = (vech(Omega_w)', vec(Sigma_wu)')'`` of length s(s+1)/2 + ns
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .linalg import (commutation, duplication, duplication_pinv, unvec, unvech, vec,
                     vech)
from .var_core import TimeSeriesDataset, VarFit


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


def sigma_plus_dim(n: int, s: int) -> int:
    return n * (n + 1) // 2 + n * s


def mu_dim(n: int, s: int) -> int:
    return s * (s + 1) // 2 + n * s


def stack_sigma_plus(Sigma_u: np.ndarray, Sigma_uw: np.ndarray) -> np.ndarray:
    return np.concatenate([vech(Sigma_u), vec(Sigma_uw)])


def split_sigma_plus(sigma_plus: np.ndarray, n: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    p = n * (n + 1) // 2
    sp = np.asarray(sigma_plus, dtype=float)
    return unvech(sp[:p], n), unvec(sp[p:p + n * s], n, s)


def mu_from_sigma_plus(sigma_plus: np.ndarray, n: int, s: int) -> np.ndarray:
    Su, Suw = split_sigma_plus(sigma_plus, n, s)
    Swu = Suw.T
    Omega = Swu @ np.linalg.solve(Su, Suw)
    return np.concatenate([vech(0.5 * (Omega + Omega.T)), vec(Swu)])


def jacobian_mu_sigma_plus(Sigma_u: np.ndarray, Sigma_uw: np.ndarray) -> np.ndarray:
    """d mu / d sigma_plus', an o x m matrix.

    The Omega_w rows are -D_s^+(XM (x) XM)D_n for vech(Sigma_u) and
    2 D_s^+(XM (x) I_s) K_{n,s} for vec(Sigma_uw), where X = Sigma_wu and
    M = Sigma_u^{-1}. The commutation factor converts the derivative
    w.r.t. vec(Sigma_wu) into one w.r.t. vec(Sigma_uw).
    """
    n, s = Sigma_uw.shape
    M = np.linalg.inv(Sigma_u)
    XM = Sigma_uw.T @ M
    Dsp = duplication_pinv(s)
    K = commutation(n, s)
    top_left = -Dsp @ np.kron(XM, XM) @ duplication(n)
    top_right = 2.0 * Dsp @ np.kron(XM, np.eye(s)) @ K
    bottom_left = np.zeros((n * s, n * (n + 1) // 2))
    return np.block([[top_left, top_right], [bottom_left, K]])


@dataclass(frozen=True)
class ProxyMoments:
    Sigma_u: np.ndarray
    Sigma_uw: np.ndarray
    nobs: int
    V_sigma_plus: Optional[np.ndarray] = None
    v_mode: str = "none"

    def __post_init__(self):
        if np.linalg.cond(self.Sigma_u) > 1e12:
            raise SingularCovarianceError("Sigma_u is numerically singular")

    @property
    def n(self) -> int:
        return self.Sigma_u.shape[0]

    @property
    def s(self) -> int:
        return self.Sigma_uw.shape[1]

    @property
    def Sigma_wu(self) -> np.ndarray:
        return self.Sigma_uw.T

    @property
    def Omega_w(self) -> np.ndarray:
        om = self.Sigma_wu @ np.linalg.solve(self.Sigma_u, self.Sigma_uw)
        return 0.5 * (om + om.T)

    @property
    def sigma_plus(self) -> np.ndarray:
        return stack_sigma_plus(self.Sigma_u, self.Sigma_uw)

    @property
    def mu(self) -> np.ndarray:
        return np.concatenate([vech(self.Omega_w), vec(self.Sigma_wu)])

    @property
    def J_sigma(self) -> np.ndarray:
        return jacobian_mu_sigma_plus(self.Sigma_u, self.Sigma_uw)

    @property
    def V_mu(self) -> Optional[np.ndarray]:
        if self.V_sigma_plus is None:
            return None
        J = self.J_sigma
        V = J @ self.V_sigma_plus @ J.T
        return 0.5 * (V + V.T)

    def with_covariance(self, V: np.ndarray, mode: str) -> "ProxyMoments":
        return ProxyMoments(self.Sigma_u, self.Sigma_uw, self.nobs, np.asarray(V), mode)

    def with_cross_moment(self, Sigma_uw: np.ndarray) -> "ProxyMoments":
        return ProxyMoments(self.Sigma_u, np.asarray(Sigma_uw, dtype=float), self.nobs,
                            self.V_sigma_plus, self.v_mode)


def jacobian_J_sigma(moments: ProxyMoments) -> np.ndarray:
    return moments.J_sigma


def aligned_proxies(fit: VarFit, data: TimeSeriesDataset, which: str = "w"
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Residual rows and proxy rows restricted to the proxy window."""
    mask = data.proxy_mask(which)[fit.resid_rows]
    if not mask.any():
        raise ValueError(f"no overlap between VAR residuals and {which} observations")
    return fit.residuals[mask], getattr(data, which)[fit.resid_rows][mask]


def compute_moments(fit: VarFit, data: TimeSeriesDataset, which: str = "w",
                    V_sigma_plus: Optional[np.ndarray] = None, v_mode: str = "none"
                    ) -> ProxyMoments:
    """Sample moments Sigma_u (VAR window) and Sigma_uw (proxy window)."""
    u, w = aligned_proxies(fit, data, which)
    Suw = u.T @ w / u.shape[0]
    return ProxyMoments(fit.Sigma_u, Suw, fit.nobs, V_sigma_plus, v_mode)


def gaussian_sigma_plus_cov(Sigma_u: np.ndarray, Sigma_uw: np.ndarray,
                            Sigma_w: np.ndarray) -> np.ndarray:
    """Covariance of sqrt(T) sigma_plus under Gaussian i.i.d. innovations.

    Uses V_eta = 2 D^+ (Sigma_eta (x) Sigma_eta) D^+' for eta = (u', w')'
    and selects the entries that make up sigma_plus.
    """
    n, s = Sigma_uw.shape
    Seta = np.block([[Sigma_u, Sigma_uw], [Sigma_uw.T, Sigma_w]])
    d = n + s
    Dp = duplication_pinv(d)
    V = 2.0 * Dp @ np.kron(Seta, Seta) @ Dp.T
    idx = sigma_plus_positions(n, s)
    return V[np.ix_(idx, idx)]


def sigma_plus_positions(n: int, s: int) -> np.ndarray:
    """Positions of the sigma_plus entries inside vech(Sigma_eta)."""
    d = n + s
    pos = {}
    p = 0
    for j in range(d):
        for i in range(j, d):
            pos[(i, j)] = p
            p += 1
    idx = [pos[(i, j)] for j in range(n) for i in range(j, n)]
    idx += [pos[(n + c, r)] for c in range(s) for r in range(n)]
    return np.array(idx)


def iid_sigma_plus_cov(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Fourth-moment covariance of sqrt(T) sigma_plus for serially independent data."""
    n, s = u.shape[1], w.shape[1]
    outer_u = vech(u[:, :, None] * u[:, None, :])
    cross = (u[:, :, None] * w[:, None, :]).reshape(u.shape[0], -1, order="F")
    xi = np.hstack([outer_u, cross])
    xi = xi - xi.mean(axis=0)
    V = xi.T @ xi / xi.shape[0]
    assert V.shape[0] == sigma_plus_dim(n, s)
    return 0.5 * (V + V.T)


Entry = Union[float, int, str]


@dataclass(frozen=True)
class RestrictionSet:
    """Linear restrictions vec(M) = S @ params + shift on a rows x cols matrix."""

    shape: tuple[int, int]
    S: np.ndarray
    shift: np.ndarray
    names: tuple[str, ...]
    target: str = "A1"
    pattern: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        r, c = self.shape
        if self.S.shape[0] != r * c or self.shift.shape != (r * c,):
            raise ValueError("selection matrix and shift do not match the matrix shape")
        if self.S.shape[1] == 0:
            raise ValueError("restriction pattern has no free parameters")
        if np.linalg.matrix_rank(self.S) < self.S.shape[1]:
            raise ValueError("selection matrix is rank deficient (duplicate or contradictory naming)")

    @property
    def a(self) -> int:
        return self.S.shape[1]

    def matrix(self, params: np.ndarray) -> np.ndarray:
        return unvec(self.S @ np.asarray(params, dtype=float) + self.shift, *self.shape)

    def params_from_matrix(self, M: np.ndarray) -> np.ndarray:
        """Least-squares projection of a matrix onto the parameter space."""
        return np.linalg.lstsq(self.S, vec(M) - self.shift, rcond=None)[0]

    def satisfied_by(self, M: np.ndarray, tol: float = 1e-10) -> bool:
        p = self.params_from_matrix(M)
        return bool(np.max(np.abs(self.matrix(p) - M)) <= tol * max(1.0, np.max(np.abs(M))))

    @classmethod
    def free(cls, rows: int, cols: int, target: str = "A1", prefix: str = "p") -> "RestrictionSet":
        names = tuple(f"{prefix}{i + 1}_{j + 1}" for j in range(cols) for i in range(rows))
        return cls((rows, cols), np.eye(rows * cols), np.zeros(rows * cols), names, target)


def build_restrictions(pattern: Sequence[Sequence[Entry]], target: str = "A1") -> RestrictionSet:
    """Restriction set from a row-major pattern.

    Each entry is a number (fixed value) or a parameter name. A leading
    ``-`` on a name shares the parameter with a flipped sign. Parameters are
    numbered in order of first appearance in vec (column-major) order.
    """
    rows = len(pattern)
    if rows == 0:
        raise ValueError("empty restriction pattern")
    cols = len(pattern[0])
    if any(len(r) != cols for r in pattern):
        raise ValueError("restriction pattern rows differ in length")
    names: list[str] = []
    entries = []
    shift = np.zeros(rows * cols)
    for j in range(cols):
        for i in range(rows):
            e = pattern[i][j]
            pos = i + j * rows
            if isinstance(e, str):
                name = e.strip()
                sign = 1.0
                if name.startswith("-"):
                    sign, name = -1.0, name[1:].strip()
                if not name:
                    raise ValueError(f"empty parameter name at entry ({i}, {j})")
                if name not in names:
                    names.append(name)
                entries.append((pos, names.index(name), sign))
            elif isinstance(e, (int, float)) and not isinstance(e, bool):
                if not np.isfinite(e):
                    raise ValueError(f"non-finite fixed value at entry ({i}, {j})")
                shift[pos] = float(e)
            else:
                raise ValueError(f"entry ({i}, {j}) must be a number or a parameter name, got {e!r}")
    S = np.zeros((rows * cols, len(names)))
    for pos, p, sign in entries:
        S[pos, p] = sign
    frozen = tuple(tuple(r) for r in pattern)
    return RestrictionSet((rows, cols), S, shift, tuple(names), target, frozen)


@dataclass(frozen=True)
class MeasurementModel:
    """Relevance matrices linking proxies to structural shocks.

    ``Lambda`` loads w on the instrumented non-target shocks, ``Phi`` loads z
    on the target shocks. In the weak embedding the stored value is the
    local constant C and the relevance at sample size T is C / sqrt(T).
    """

    Lambda: Optional[np.ndarray] = None
    Phi: Optional[np.ndarray] = None
    strength: str = "strong"

    def relevance(self, T: int) -> tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        scale = 1.0 if self.strength == "strong" else 1.0 / np.sqrt(T)
        L = None if self.Lambda is None else np.atleast_2d(self.Lambda) * scale
        P = None if self.Phi is None else np.atleast_2d(self.Phi) * scale
        return L, P

    def check_strong(self, tol: float = 1e-8) -> bool:
        if self.Lambda is None:
            return True
        sv = np.linalg.svd(np.atleast_2d(self.Lambda), compute_uv=False)
        return bool(sv.min() > tol)


def prewhiten_proxy(raw: np.ndarray, lags: int = 4, covariates: Optional[np.ndarray] = None,
                    intercept: bool = True) -> np.ndarray:
    """Residuals from projecting a proxy on its own lags and lagged covariates.

    The output has the same length as ``raw``; the first ``lags`` entries
    are NaN.
    """
    x = np.asarray(raw, dtype=float).reshape(-1)
    T = x.shape[0]
    if T - lags < lags + 5 + (0 if covariates is None else np.atleast_2d(covariates).shape[-1] * lags):
        raise ValueError("too few observations to pre-whiten the proxy")
    cols = [x[lags - i - 1:T - i - 1] for i in range(lags)]
    if covariates is not None:
        cv = np.asarray(covariates, dtype=float)
        if cv.ndim == 1:
            cv = cv[:, None]
        if cv.shape[0] != T:
            raise ValueError("covariates must be aligned with the raw proxy")
        cols += [cv[lags - i - 1:T - i - 1, c] for i in range(lags) for c in range(cv.shape[1])]
    if intercept:
        cols.append(np.ones(T - lags))
    X = np.column_stack(cols)
    y = x[lags:]
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise ValueError("pre-whitening regressors are collinear (constant or degenerate proxy)")
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    out = np.full(T, np.nan)
    out[lags:] = y - X @ beta
    return out
