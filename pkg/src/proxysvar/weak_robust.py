"""Weak-instrument robust confidence sets for responses to target shocks.

With proxies z for the k target shocks and a fixed impact block B11_0,
the postulated responses beta (1 x k) of one variable at horizon h are
tested through

    S(kappa, beta) = vec(e' Phi_h Sigma_uz - beta Phi_p'),
    Phi_p' = B11_0^{-1} (I_k, 0) Sigma_uz,

where Phi_h is the leading n x n block of the companion power C^h and
kappa = (vec(Pi)', vec(Sigma_uz)')'. The Wald statistic
T S' V_S^{-1} S is chi2(k) at the true responses whatever the proxy
strength, so inverting it over a grid gives a robust set.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .linalg import duplication
from .var_core import VarFit, irf_from_companion, irf_pi_jacobian


def plugin_phi(Sigma_uz: np.ndarray, B11_0: np.ndarray) -> np.ndarray:
    """Phi_p' = B11_0^{-1} (I_k, 0) Sigma_uz, returned as a k x r matrix."""
    B = np.atleast_2d(np.asarray(B11_0, dtype=float))
    Suz = np.atleast_2d(np.asarray(Sigma_uz, dtype=float).T).T
    k = B.shape[0]
    if abs(np.linalg.det(B)) < 1e-14:
        raise np.linalg.LinAlgError("B11_0 is singular")
    return np.linalg.solve(B, Suz[:k])


def _power_block(Pi: np.ndarray, h: int) -> np.ndarray:
    n, nl = Pi.shape
    C = np.zeros((nl, nl))
    C[:n] = Pi
    C[n:, :-n] = np.eye(nl - n)
    return np.linalg.matrix_power(C, h)[:n, :n]


def s_statistic(Pi: np.ndarray, Sigma_uz: np.ndarray, beta: np.ndarray, B11_0: np.ndarray, h: int,
                response: int) -> np.ndarray:
    """S(kappa, beta) for the response of variable ``response`` at horizon h."""
    Suz = np.atleast_2d(np.asarray(Sigma_uz, dtype=float).T).T
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    a = _power_block(np.asarray(Pi, dtype=float), h)[response] @ Suz
    return a - beta @ plugin_phi(Suz, B11_0)


def s_gradient(Pi: np.ndarray, Sigma_uz: np.ndarray, beta: np.ndarray, B11_0: np.ndarray, h: int,
               response: int) -> np.ndarray:
    """dS / d kappa' with kappa = (vec(Pi)', vec(Sigma_uz)')'; shape r x (n*nl + n*r)."""
    Pi = np.asarray(Pi, dtype=float)
    Suz = np.atleast_2d(np.asarray(Sigma_uz, dtype=float).T).T
    n, nl = Pi.shape
    r = Suz.shape[1]
    B = np.atleast_2d(np.asarray(B11_0, dtype=float))
    k = B.shape[0]
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    C = np.zeros((nl, nl))
    C[:n] = Pi
    C[n:, :-n] = np.eye(nl - n)
    dpi = np.vstack([irf_pi_jacobian(C, n, Suz[:, j], h)[h][response] for j in range(r)])
    E = np.eye(k, n)
    row = _power_block(Pi, h)[response] - beta @ np.linalg.solve(B, E)
    dsig = np.kron(np.eye(r), row[None, :])
    return np.hstack([dpi, dsig])


@dataclass(frozen=True)
class RobustSet:
    h: int
    response: int
    grid: tuple                      # one 1-d array per response coordinate
    wald: np.ndarray                 # shape of the product grid
    accepted: np.ndarray             # boolean, same shape
    projection: np.ndarray           # (k, 2), NaN when empty
    hodges_lehmann: np.ndarray       # (k,)
    hl_p_value: float
    B11_0: np.ndarray
    significance: float
    critical_value: float
    skipped: int = 0

    @property
    def empty(self) -> bool:
        return not bool(self.accepted.any())

    def rows(self):
        for idx in itertools.product(*[range(len(g)) for g in self.grid]):
            pt = [float(self.grid[i][j]) for i, j in enumerate(idx)]
            yield [self.h] + pt + [float(self.wald[idx]), bool(self.accepted[idx])]


def export_sets_csv(sets: Sequence[RobustSet], path: str | Path) -> None:
    k = len(sets[0].grid) if sets else 1
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["h"] + [f"beta{i + 1}" for i in range(k)] + ["wald", "accepted"])
        for s_ in sets:
            for row in s_.rows():
                wr.writerow([row[0]] + [repr(x) for x in row[1:-2]] + [repr(row[-2]), int(row[-1])])


def wald_statistic(Pi, Sigma_uz, V_kappa, nobs: int, beta, B11_0, h: int, response: int) -> float:
    S = s_statistic(Pi, Sigma_uz, beta, B11_0, h, response)
    G = s_gradient(Pi, Sigma_uz, beta, B11_0, h, response)
    V = G @ V_kappa @ G.T
    return float(nobs * S @ np.linalg.solve(V, S))


def robust_point_and_se(Pi, Sigma_uz, V_kappa, nobs: int, B11_0, h: int, response: int
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Responses solving S = 0 and their delta-method standard errors."""
    Suz = np.atleast_2d(np.asarray(Sigma_uz, dtype=float).T).T
    Php = plugin_phi(Suz, B11_0)                       # k x r
    a = _power_block(np.asarray(Pi, dtype=float), h)[response] @ Suz
    beta = np.linalg.lstsq(Php.T, a, rcond=None)[0]
    G = s_gradient(Pi, Suz, beta, B11_0, h, response)
    D = np.linalg.pinv(Php.T) @ G
    V = D @ V_kappa @ D.T / nobs
    return beta, np.sqrt(np.maximum(np.diag(V), 0.0))


def invert_wald(Pi: np.ndarray, Sigma_uz: np.ndarray, V_kappa: np.ndarray, nobs: int,
                B11_0: np.ndarray, h_range: Sequence[int], response: int,
                significance: float = 0.10, grid: Optional[Sequence[np.ndarray]] = None,
                width_se: float = 6.0, points: Optional[int] = None) -> list[RobustSet]:
    """Grid inversion of the Wald test for each horizon in ``h_range``.

    ``grid`` (one array per target shock) applies to every horizon; by
    default each coordinate spans the point estimate +- ``width_se``
    delta-method standard errors.
    """
    Suz = np.atleast_2d(np.asarray(Sigma_uz, dtype=float).T).T
    B = np.atleast_2d(np.asarray(B11_0, dtype=float))
    k = B.shape[0]
    r = Suz.shape[1]
    if points is None:
        points = 401 if k == 1 else 61
    crit = float(stats.chi2.ppf(1.0 - significance, df=r))
    out = []
    for h in h_range:
        if grid is None:
            b0, se = robust_point_and_se(Pi, Suz, V_kappa, nobs, B, h, response)
            se = np.where(se > 0, se, 1e-8 + 1e-3 * np.abs(b0))
            axes = tuple(np.linspace(b0[i] - width_se * se[i], b0[i] + width_se * se[i], points)
                         for i in range(k))
        else:
            axes = tuple(np.asarray(g, dtype=float) for g in grid)
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        Php = plugin_phi(Suz, B)
        a = _power_block(np.asarray(Pi, dtype=float), h)[response] @ Suz
        S = a[None, :] - mesh @ Php                                  # (P, r)
        G0 = s_gradient(Pi, Suz, np.zeros(k), B, h, response)       # gradient at beta = 0
        E = np.eye(k, Suz.shape[0])
        BinvE = np.linalg.solve(B, E)                                 # k x n
        # gradient is affine in beta: G(beta) = G0 - [0, I_r (x) beta B^{-1} E]
        nk = G0.shape[1] - r * Suz.shape[0]
        rows = mesh @ BinvE                                           # (P, n)
        G = np.broadcast_to(G0, (mesh.shape[0],) + G0.shape).copy()
        for j in range(r):
            cols = slice(nk + j * Suz.shape[0], nk + (j + 1) * Suz.shape[0])
            G[:, j, cols] -= rows
        V = np.einsum("pid,de,pje->pij", G, V_kappa, G)
        wald = np.full(mesh.shape[0], np.inf)
        det = np.linalg.det(V)
        ok = np.abs(det) > 1e-300
        if ok.any():
            sol = np.linalg.solve(V[ok], S[ok][..., None])[..., 0]
            wald[ok] = nobs * np.einsum("pi,pi->p", S[ok], sol)
        skipped = int((~ok).sum())
        shape = tuple(len(ax) for ax in axes)
        wald = wald.reshape(shape)
        acc = wald <= crit
        best = np.unravel_index(int(np.argmin(wald)), shape)
        hl = np.array([axes[i][best[i]] for i in range(k)])
        p_hl = float(stats.chi2.sf(wald[best], df=r))
        proj = np.full((k, 2), np.nan)
        if acc.any():
            idx = np.argwhere(acc)
            for i in range(k):
                vals = axes[i][idx[:, i]]
                proj[i] = vals.min(), vals.max()
        out.append(RobustSet(h=h, response=response, grid=axes, wald=wald, accepted=acc,
                             projection=proj, hodges_lehmann=hl, hl_p_value=p_hl, B11_0=B,
                             significance=significance, critical_value=crit, skipped=skipped))
    return out


def plugin_direct_impact(Sigma_u: np.ndarray, Sigma_uz: np.ndarray) -> np.ndarray:
    """Impact column Sigma_uz / sqrt(Sigma_zu Sigma_u^{-1} Sigma_uz) for one proxy, sign B11 >= 0."""
    c = np.asarray(Sigma_uz, dtype=float).reshape(-1)
    q = float(c @ np.linalg.solve(Sigma_u, c))
    if q <= 0:
        raise FloatingPointError("proxy has zero covariance with the innovations")
    b = c / np.sqrt(q)
    return b if b[0] >= 0 else -b


@dataclass(frozen=True)
class PluginBands:
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


def plugin_direct_ci(var_fit: VarFit, Sigma_uz: np.ndarray, V_kappa_plus: np.ndarray, nobs: int,
                     level: float = 0.90, h_max: int = 12) -> PluginBands:
    """Delta-method bands for the plug-in direct estimator with one proxy.

    ``V_kappa_plus`` is the covariance of sqrt(T)(vec Pi, vech Sigma_u, vec Sigma_uz).
    """
    n = var_fit.n
    Su = var_fit.Sigma_u
    c = np.asarray(Sigma_uz, dtype=float).reshape(-1)
    M = np.linalg.inv(Su)
    q = float(c @ M @ c)
    sgn = 1.0 if c[0] >= 0 else -1.0
    s_ = np.sqrt(q)
    b = sgn * c / s_
    Mc = M @ c
    db_dc = sgn * (np.eye(n) / s_ - np.outer(c, Mc) / s_ ** 3)
    db_dsig = sgn * np.outer(c, np.kron(Mc, Mc)) @ duplication(n) / (2.0 * s_ ** 3)
    C = var_fit.companion
    vals = irf_from_companion(C, n, b, h_max)
    Jpi = irf_pi_jacobian(C, n, b, h_max)
    z = stats.norm.ppf(0.5 + level / 2.0)
    lo = np.empty_like(vals)
    hi = np.empty_like(vals)
    P = np.eye(C.shape[0])
    for h in range(h_max + 1):
        Phi = P[:n, :n]
        J = np.hstack([Jpi[h], Phi @ db_dsig, Phi @ db_dc])
        se = np.sqrt(np.maximum(np.diag(J @ V_kappa_plus @ J.T) / nobs, 0.0))
        lo[h] = vals[h] - z * se
        hi[h] = vals[h] + z * se
        P = C @ P
    return PluginBands(vals, lo, hi, level)


def diagonal_wald(Sigma_uz: np.ndarray, V_sigma_uz: np.ndarray, k: int, nobs: int
                  ) -> tuple[float, float, int]:
    """Wald test that the off-diagonal entries of the top k x r block of Sigma_uz are zero.

    ``V_sigma_uz`` is the covariance of sqrt(T) vec(Sigma_uz). Returns
    (statistic, p-value, degrees of freedom).
    """
    Suz = np.atleast_2d(np.asarray(Sigma_uz, dtype=float).T).T
    n, r = Suz.shape
    idx = [i + j * n for j in range(r) for i in range(k) if i != j]
    if not idx:
        raise ValueError("no off-diagonal entries to test")
    x = Suz.reshape(-1, order="F")[idx]
    V = V_sigma_uz[np.ix_(idx, idx)]
    W = float(nobs * x @ np.linalg.solve(V, x))
    return W, float(stats.chi2.sf(W, df=len(idx))), len(idx)
