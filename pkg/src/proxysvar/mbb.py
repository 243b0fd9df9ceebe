"""Residual-based moving block bootstrap for the stacked VAR-proxy system.

Draws are generated from per-draw generators whose seeds depend only on
(base_seed, draw index), so an ensemble of N draws is a pure function of
(data, block length, N, base_seed). All draws are then propagated through
the VAR recursion together as one batched array computation.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cmd_strength import CmdOptions, ThetaFit, ThetaRestrictions, initial_theta, solve_theta, weight_factor
from .linalg import inv_sqrt_psd, vec, vech
from .md_estimation import MdOptions, md_estimate
from .proxy_model import ProxyMoments, RestrictionSet
from .var_core import STABILITY_THRESHOLD, TimeSeriesDataset, VarFit, irf_from_companion, build_companion


DRAW_CHUNK_ELEMENTS = 4_000_000


class ExplosiveDrawError(RuntimeError):
    pass


def derive_seed(seed: int, *keys: int) -> int:
    """64-bit seed mixed from ``seed`` and integer keys via numpy's SeedSequence hash."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def block_length(T: int, override: Optional[int] = None) -> int:
    """Largest integer strictly below 5.03 T^{1/4}, unless overridden."""
    if override is not None:
        if not 1 <= override < T:
            raise ValueError(f"block length {override} must lie in 1..{T - 1}")
        return int(override)
    if T < 16:
        raise ValueError("block length rule needs T >= 16")
    return int(math.ceil(5.03 * T ** 0.25)) - 1


def _block_indices(T: int, ell: int, rng: np.random.Generator) -> np.ndarray:
    nblocks = -(-T // ell)
    starts = rng.integers(0, T - ell + 1, size=nblocks)
    return (starts[:, None] + np.arange(ell)[None, :]).ravel()[:T]


def position_means(eta: np.ndarray, ell: int) -> np.ndarray:
    """Mean of eta over every block start, for each within-block position."""
    T = eta.shape[0]
    cs = np.vstack([np.zeros((1, eta.shape[1])), np.cumsum(eta, axis=0)])
    width = T - ell + 1
    return (cs[np.arange(ell) + width] - cs[np.arange(ell)]) / width


def mbb_resample(eta: np.ndarray, ell: int, seed) -> np.ndarray:
    """One centered block resample of the rows of ``eta`` (T x d)."""
    eta = np.asarray(eta, dtype=float)
    T = eta.shape[0]
    if not 1 <= ell < T:
        raise ValueError(f"block length {ell} must lie in 1..{T - 1}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = _block_indices(T, ell, rng)
    return eta[idx] - position_means(eta, ell)[np.arange(T) % ell]


@dataclass(frozen=True)
class BootstrapEnsemble:
    """Replications of the reduced-form VAR-proxy parameters."""

    N: int
    block_length: int
    base_seed: int
    seeds: tuple[int, ...]
    Pi: np.ndarray            # (N, n, nl)
    Sigma_u: np.ndarray       # (N, n, n)
    Sigma_uw: np.ndarray      # (N, n, s)
    flagged: np.ndarray       # (N,) draws explosive even after one redraw
    redrawn: int
    nobs: int
    point_Pi: np.ndarray = field(repr=False)
    point_Sigma_u: np.ndarray = field(repr=False)
    point_Sigma_uw: np.ndarray = field(repr=False)

    @property
    def sigma_plus(self) -> np.ndarray:
        if self.N == 0:
            return np.zeros((0, 0))
        return np.hstack([vech(self.Sigma_u), _vec_batch(self.Sigma_uw)])

    @property
    def point_sigma_plus(self) -> np.ndarray:
        return np.concatenate([vech(self.point_Sigma_u), vec(self.point_Sigma_uw)])

    def mu(self) -> np.ndarray:
        Swu = np.transpose(self.Sigma_uw, (0, 2, 1))
        Om = Swu @ np.linalg.solve(self.Sigma_u, self.Sigma_uw)
        Om = 0.5 * (Om + np.transpose(Om, (0, 2, 1)))
        return np.hstack([vech(Om), _vec_batch(Swu)])

    def kappa(self, include_sigma_u: bool = False) -> np.ndarray:
        """Stack (vec Pi[, vech Sigma_u], vec Sigma_uw) per draw."""
        parts = [_vec_batch(self.Pi)]
        if include_sigma_u:
            parts.append(vech(self.Sigma_u))
        parts.append(_vec_batch(self.Sigma_uw))
        return np.hstack(parts)

    def scaled_cov(self, draws: np.ndarray) -> np.ndarray:
        """T times the ensemble covariance of ``draws`` (rows are draws)."""
        if self.N < 2:
            raise ValueError("need at least two draws for a covariance")
        V = np.cov(draws, rowvar=False, ddof=1) * self.nobs
        return 0.5 * (V + V.T)

    def sigma_plus_cov(self) -> np.ndarray:
        return self.scaled_cov(self.sigma_plus)

    def to_csv(self, path: str | Path) -> None:
        sp = self.sigma_plus
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["draw", "seed", "flagged"] + [f"pi{i}" for i in range(self.Pi[0].size)]
                        + [f"sigma_plus{i}" for i in range(sp.shape[1])])
            for d in range(self.N):
                wr.writerow([d, self.seeds[d], int(self.flagged[d])]
                            + [repr(float(x)) for x in vec(self.Pi[d])]
                            + [repr(float(x)) for x in sp[d]])


def _vec_batch(a: np.ndarray) -> np.ndarray:
    """Column-stacking vec applied to each matrix of a (N, r, c) stack."""
    return np.transpose(a, (0, 2, 1)).reshape(a.shape[0], -1)


def _proxy_block(fit: VarFit, data: TimeSeriesDataset, which: str) -> tuple[int, int]:
    """Contiguous range of residual rows that carry proxy observations."""
    mask = data.proxy_mask(which)[fit.resid_rows]
    pos = np.flatnonzero(mask)
    if pos.size == 0:
        raise ValueError(f"no {which} observations inside the VAR sample")
    if pos[-1] - pos[0] + 1 != pos.size:
        raise ValueError(f"{which} observations must form one contiguous window for the bootstrap")
    return int(pos[0]), int(pos[-1]) + 1


def _simulate_and_refit(fit: VarFit, Y_init: np.ndarray, e_u: np.ndarray, w_star: np.ndarray):
    """Rebuild Y* recursively for a batch of residual paths and refit the VAR."""
    N, T, n = e_u.shape
    l = fit.lags
    Pi_blocks = [fit.Pi[:, i * n:(i + 1) * n].T for i in range(l)]
    c = fit.intercept
    path = np.empty((N, T + l, n))
    path[:, :l] = Y_init[None]
    for t in range(T):
        acc = e_u[:, t].copy()
        if c is not None:
            acc += c
        for i in range(l):
            acc += np.einsum("ni,ij->nj", path[:, l + t - 1 - i], Pi_blocks[i])
        path[:, l + t] = acc
    Z = np.concatenate([path[:, l - i - 1:l - i - 1 + T] for i in range(l)], axis=2)
    if c is not None:
        Z = np.concatenate([Z, np.ones((N, T, 1))], axis=2)
    Yt = path[:, l:]
    ZtZ = np.einsum("ntp,ntq->npq", Z, Z)
    ZtY = np.einsum("ntp,ntq->npq", Z, Yt)
    coef = np.linalg.solve(ZtZ, ZtY)          # (N, p, n)
    resid = Yt - np.einsum("ntp,npq->ntq", Z, coef)
    Pi = np.transpose(coef[:, :n * l, :], (0, 2, 1))
    Su = np.einsum("nti,ntj->nij", resid, resid) / T
    Su = 0.5 * (Su + np.transpose(Su, (0, 2, 1)))
    Suw = np.einsum("nti,ntj->nij", resid, w_star) / T
    return Pi, Su, Suw


def _spectral_radii(Pi: np.ndarray) -> np.ndarray:
    return np.array([np.max(np.abs(np.linalg.eigvals(build_companion(p)))) for p in Pi])


def bootstrap_var_proxy(fit: VarFit, data: TimeSeriesDataset, ell: int, N: int, base_seed: int,
                        which: str = "w", max_redraw_share: float = 0.10) -> BootstrapEnsemble:
    """MBB replications of (Pi, Sigma_u, Sigma_uw) for the stacked system.

    The proxy equation carries no dynamics: w*_t equals its mean (when the
    VAR has an intercept) plus the resampled proxy innovation. Initial
    values are the observed presample rows. Draws whose refitted VAR is
    explosive are redrawn once from a secondary seed; draws still explosive
    are kept and flagged. More than ``max_redraw_share`` redraws is an error.
    """
    lo, hi = _proxy_block(fit, data, which)
    u = fit.residuals[lo:hi]
    prox = getattr(data, which)[fit.resid_rows[lo:hi]]
    w_mean = prox.mean(axis=0) if fit.intercept is not None else np.zeros(prox.shape[1])
    eta = np.hstack([u, prox - w_mean])
    T, n = u.shape
    first_row = fit.resid_rows[lo]
    Y_init = data.Y[first_row - fit.lags:first_row]
    point_Suw = u.T @ prox / T
    point_Su = u.T @ u / T
    empty = BootstrapEnsemble(0, ell, base_seed, (), np.zeros((0,) + fit.Pi.shape),
                              np.zeros((0, n, n)), np.zeros((0, n, prox.shape[1])),
                              np.zeros(0, dtype=bool), 0, T, fit.Pi, point_Su, point_Suw)
    if N == 0:
        return empty
    if not 1 <= ell < T:
        raise ValueError(f"block length {ell} must lie in 1..{T - 1}")
    pm = position_means(eta, ell)[np.arange(T) % ell]
    seeds = tuple(derive_seed(base_seed, d) for d in range(N))

    # bound memory by refitting a fixed number of draws at a time; each draw
    # depends only on its own seed, so the chunking does not affect results
    per_chunk = max(1, DRAW_CHUNK_ELEMENTS // (T * eta.shape[1]))

    def draw(seed_list):
        parts = []
        for lo in range(0, len(seed_list), per_chunk):
            chunk = seed_list[lo:lo + per_chunk]
            idx = np.stack([_block_indices(T, ell, np.random.default_rng(sd)) for sd in chunk])
            e = eta[idx] - pm[None]
            w_star = e[:, :, n:] + w_mean
            parts.append(_simulate_and_refit(fit, Y_init, e[:, :, :n], w_star))
        return tuple(np.concatenate(x) for x in zip(*parts))

    Pi, Su, Suw = draw(seeds)
    radii = _spectral_radii(Pi)
    bad = np.flatnonzero(radii >= STABILITY_THRESHOLD)
    flagged = np.zeros(N, dtype=bool)
    if bad.size:
        if bad.size > max_redraw_share * N:
            raise ExplosiveDrawError(
                f"{bad.size} of {N} bootstrap draws produced an explosive VAR")
        Pi2, Su2, Suw2 = draw([derive_seed(base_seed, int(d), 1) for d in bad])
        Pi[bad], Su[bad], Suw[bad] = Pi2, Su2, Suw2
        flagged[bad] = _spectral_radii(Pi2) >= STABILITY_THRESHOLD
    return BootstrapEnsemble(N, ell, int(base_seed), seeds, Pi, Su, Suw, flagged, int(bad.size), T,
                             fit.Pi, point_Su, point_Suw)


def bootstrap_sigma_plus_cov(fit: VarFit, data: TimeSeriesDataset, N: int = 500, seed: int = 0,
                             ell: Optional[int] = None, which: str = "w") -> np.ndarray:
    """MBB estimate of the covariance of sqrt(T) sigma_plus."""
    T = fit.nobs
    ens = bootstrap_var_proxy(fit, data, block_length(T, ell), N, seed, which)
    return ens.sigma_plus_cov()


@dataclass(frozen=True)
class ThetaEnsemble:
    theta: np.ndarray        # (N, q)
    Gamma: np.ndarray        # (N, q)
    converged: np.ndarray    # (N,)
    beta2_index: slice
    lam_index: slice

    @property
    def beta2(self) -> np.ndarray:
        return self.theta[:, self.beta2_index]

    @property
    def lam(self) -> np.ndarray:
        return self.theta[:, self.lam_index]


def bootstrap_theta(ensemble: BootstrapEnsemble, theta_fit: ThetaFit, V_mu: np.ndarray,
                    options: CmdOptions = CmdOptions()) -> ThetaEnsemble:
    """CMD re-estimation on every draw with the original-sample weight."""
    R: ThetaRestrictions = theta_fit.restrictions
    L = weight_factor(V_mu)
    mus = ensemble.mu()
    N = ensemble.N
    out = np.zeros((N, R.q))
    conv = np.zeros(N, dtype=bool)
    for d in range(N):
        Swu = ensemble.Sigma_uw[d].T
        Om = Swu @ np.linalg.solve(ensemble.Sigma_u[d], ensemble.Sigma_uw[d])
        x0 = initial_theta(Om, ensemble.Sigma_uw[d], R)
        th, res = solve_theta(mus[d], L, R, x0, options)
        if not res.converged:
            th, res = solve_theta(mus[d], L, R, x0,
                                  CmdOptions(options.gtol, options.max_iter, options.restarts, options.seed + 1))
        out[d] = th
        conv[d] = res.converged
    if theta_fit.V_theta is not None and N:
        Gam = np.sqrt(ensemble.nobs) * (out - theta_fit.theta) @ inv_sqrt_psd(theta_fit.V_theta).T
    else:
        Gam = np.full_like(out, np.nan)
    a = R.beta2.a
    return ThetaEnsemble(out, Gam, conv, slice(0, a), slice(a, R.q))


def bootstrap_md_irf(ensemble: BootstrapEnsemble, restrictions: RestrictionSet, h_max: int,
                     shock: int = 0, V_sigma_plus: Optional[np.ndarray] = None,
                     options: MdOptions = MdOptions()) -> np.ndarray:
    """Indirect-MD impulse responses recomputed on every draw, shape (N, h_max+1, n)."""
    n = ensemble.Pi.shape[1]
    out = np.zeros((ensemble.N, h_max + 1, n))
    opts = options if V_sigma_plus is not None else MdOptions(
        options.gtol, options.max_iter, options.restarts, options.seed, options.rank_tol, "identity")
    for d in range(ensemble.N):
        mom = ProxyMoments(ensemble.Sigma_u[d], ensemble.Sigma_uw[d], ensemble.nobs, V_sigma_plus, "fixed")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = md_estimate(mom, restrictions, opts)
        out[d] = irf_from_companion(build_companion(ensemble.Pi[d]), n, fit.B1[:, shock], h_max)
    return out


def quantile7(draws: np.ndarray, q, axis: int = 0) -> np.ndarray:
    """Type-7 (linear interpolation) sample quantiles."""
    return np.quantile(draws, q, axis=axis, method="linear")


def percentile_ci(draws: np.ndarray, level: float) -> tuple[np.ndarray, np.ndarray]:
    a = 1.0 - level
    return quantile7(draws, a / 2.0), quantile7(draws, 1.0 - a / 2.0)


def hall_percentile_ci(point: np.ndarray, draws: np.ndarray, level: float = 0.90
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Hall's reflected percentile band [2g - q_{1-a/2}, 2g - q_{a/2}]."""
    lo_q, hi_q = percentile_ci(np.asarray(draws, dtype=float), level)
    point = np.asarray(point, dtype=float)
    return 2.0 * point - hi_q, 2.0 * point - lo_q
