"""Shared estimation steps used by the pre-test, the CLI and the Monte Carlo harness."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .mbb import bootstrap_var_proxy, block_length, derive_seed
from .proxy_model import (ProxyMoments, aligned_proxies, compute_moments, gaussian_sigma_plus_cov,
                          iid_sigma_plus_cov)
from .var_core import TimeSeriesDataset, VarFit

# purpose keys for derived seeds
SEED_COV = 1
SEED_PRETEST = 2
SEED_BANDS = 3
SEED_OPTIM = 4

COV_MODES = ("mbb", "gaussian", "iid")


@dataclass(frozen=True)
class CovarianceConfig:
    mode: str = "mbb"
    N_cov: int = 500
    block_length: Optional[int] = None

    def __post_init__(self):
        if self.mode not in COV_MODES:
            raise ValueError(f"covariance mode must be one of {COV_MODES}, got {self.mode!r}")


def proxy_nobs(fit: VarFit, data: TimeSeriesDataset, which: str = "w") -> int:
    return int(data.proxy_mask(which)[fit.resid_rows].sum())


def moments_with_covariance(fit: VarFit, data: TimeSeriesDataset, cov: CovarianceConfig, seed: int,
                            which: str = "w") -> ProxyMoments:
    """Sample proxy moments together with an estimate of V_sigma_plus."""
    mom = compute_moments(fit, data, which)
    if cov.mode == "mbb":
        ens = bootstrap_var_proxy(fit, data, block_length(proxy_nobs(fit, data, which), cov.block_length),
                                  cov.N_cov, derive_seed(seed, SEED_COV), which)
        V = ens.sigma_plus_cov()
    else:
        u, w = aligned_proxies(fit, data, which)
        if cov.mode == "gaussian":
            V = gaussian_sigma_plus_cov(mom.Sigma_u, mom.Sigma_uw, w.T @ w / w.shape[0])
        else:
            V = iid_sigma_plus_cov(u, w)
    return mom.with_covariance(V, cov.mode)
