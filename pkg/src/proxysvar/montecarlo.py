"""Simulation design and Monte Carlo experiments for the pre-test and coverage."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .mbb import derive_seed
from .var_core import TimeSeriesDataset

PI1 = np.array([[0.67, -0.12, 0.42],
                [0.03, 0.43, 0.08],
                [0.14, 0.02, 0.58]])
B = np.array([[0.196, 0.0, 0.19],
              [0.210, 0.16, -0.32],
              [0.017, 0.0, 0.09]])
A1_ROW = np.array([6.246, 0.0, -13.185])
LAMBDA_STRONG = 0.8
SIGMA_W = 1.1
GARCH = (0.02, 0.05, 0.93)   # (rho0, rho1, rho2)
CORR_MODERATE = 0.25
CORR_WEAK = 0.05
CORR_Z = 0.045
T_REF = 250


def lambda_for_corr(corr: float, sigma: float) -> float:
    """Loading that gives corr(proxy, shock) = corr for unit-variance shocks."""
    if not -1.0 < corr < 1.0:
        raise ValueError("correlation must lie in (-1, 1)")
    return corr * sigma / math.sqrt(1.0 - corr * corr)


def corr_for_lambda(lam: float, sigma: float) -> float:
    return lam / math.sqrt(lam * lam + sigma * sigma)


@dataclass(frozen=True)
class DgpSpec:
    """Three-variable SVAR(1) with a proxy for the third (non-target) shock.

    ``strength`` is "strong" (fixed loading ``lam``) or "local" (loading
    c / sqrt(T) with c solved from ``corr_target`` at ``T_ref``).
    """

    T: int = 250
    Pi1: tuple = tuple(map(tuple, PI1))
    B: tuple = tuple(map(tuple, B))
    strength: str = "strong"
    lam: float = LAMBDA_STRONG
    corr_target: float = CORR_WEAK
    T_ref: int = T_REF
    sigma_w: float = SIGMA_W
    instrumented: int = 2
    z_corr: Optional[float] = None
    sigma_z: float = 1.0
    target: int = 0
    innovations: str = "iid"
    garch: tuple = GARCH
    burn_in: int = 200

    def __post_init__(self):
        P = np.asarray(self.Pi1)
        if np.max(np.abs(np.linalg.eigvals(P))) >= 1.0:
            raise ValueError("Pi1 is not stable")
        if self.innovations not in ("iid", "garch"):
            raise ValueError(f"innovations must be 'iid' or 'garch', got {self.innovations!r}")
        if self.innovations == "garch" and self.garch[1] + self.garch[2] >= 1.0:
            raise ValueError("GARCH persistence must be below one")
        if self.strength not in ("strong", "local"):
            raise ValueError(f"strength must be 'strong' or 'local', got {self.strength!r}")
        for c in (self.corr_target, self.z_corr):
            if c is not None and not -1.0 < c < 1.0:
                raise ValueError("correlations must lie in (-1, 1)")

    @property
    def n(self) -> int:
        return len(self.Pi1)

    @property
    def lambda_T(self) -> float:
        if self.strength == "strong":
            return self.lam
        c = lambda_for_corr(self.corr_target, self.sigma_w) * math.sqrt(self.T_ref)
        return c / math.sqrt(self.T)

    @property
    def phi_T(self) -> Optional[float]:
        if self.z_corr is None:
            return None
        c = lambda_for_corr(self.z_corr, self.sigma_z) * math.sqrt(self.T_ref)
        return c / math.sqrt(self.T)

    def true_irf(self, h_max: int = 12, shock: int = 0) -> np.ndarray:
        P = np.asarray(self.Pi1)
        out = np.empty((h_max + 1, self.n))
        x = np.asarray(self.B)[:, shock].copy()
        for h in range(h_max + 1):
            out[h] = x
            x = P @ x
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["Pi1"] = [list(r) for r in self.Pi1]
        d["B"] = [list(r) for r in self.B]
        d["garch"] = list(self.garch)
        return d


def garch_innovations(rng: np.random.Generator, T: int, d: int, params=GARCH) -> np.ndarray:
    """Independent GARCH(1,1) coordinates started at the unconditional variance."""
    r0, r1, r2 = params
    z = rng.standard_normal((T, d))
    out = np.empty((T, d))
    var = np.full(d, r0 / (1.0 - r1 - r2))
    prev = np.zeros(d)
    for t in range(T):
        if t > 0:
            var = r0 + r1 * prev ** 2 + r2 * var
        prev = np.sqrt(var) * z[t]
        out[t] = prev
    return out


@dataclass(frozen=True)
class SimulatedPath:
    data: TimeSeriesDataset
    shocks: np.ndarray
    proxy_noise: np.ndarray


def simulate_path(spec: DgpSpec, seed: int) -> SimulatedPath:
    rng = np.random.default_rng(seed)
    n = spec.n
    total = spec.T + spec.burn_in
    d = n + 1 + (1 if spec.z_corr is not None else 0)
    if spec.innovations == "iid":
        xi = rng.standard_normal((total, d))
    else:
        xi = garch_innovations(rng, total, d, spec.garch)
    eps = xi[:, :n]
    u = eps @ np.asarray(spec.B).T
    P = np.asarray(spec.Pi1)
    Y = np.zeros((total, n))
    prev = np.zeros(n)
    for t in range(total):
        prev = P @ prev + u[t]
        Y[t] = prev
    w = spec.lambda_T * eps[:, spec.instrumented] + spec.sigma_w * xi[:, n]
    z = None
    if spec.z_corr is not None:
        z = spec.phi_T * eps[:, spec.target] + spec.sigma_z * xi[:, n + 1]
    keep = slice(spec.burn_in, total)
    data = TimeSeriesDataset(Y=Y[keep], w=w[keep, None],
                             z=None if z is None else z[keep, None])
    return SimulatedPath(data, eps[keep], xi[keep, n:])


def simulate(spec: DgpSpec, seed: int = 0) -> TimeSeriesDataset:
    return simulate_path(spec, seed).data


# ----------------------------------------------------------------- experiments

from .md_estimation import MdOptions, delta_method_irf_ci, md_estimate  # noqa: E402
from .parallel import ordered_map  # noqa: E402
from .pipeline import SEED_BANDS, moments_with_covariance  # noqa: E402
from .proxy_model import build_restrictions  # noqa: E402
from .relevance_test import PretestConfig, apply_test, pretest_ensemble  # noqa: E402
from .var_core import fit_var, irf_from_companion  # noqa: E402
from .mbb import bootstrap_md_irf, bootstrap_var_proxy, block_length, hall_percentile_ci  # noqa: E402
from .weak_robust import plugin_direct_ci, wald_statistic  # noqa: E402

DESIGN_PATTERN = [["a11", 0.0, "a13"]]
COVERAGE_METHODS = ("md-delta", "md-hall", "plugin-direct", "robust")


def design_restrictions():
    """Target row (a11, 0, a13) with the second entry fixed at zero."""
    return build_restrictions(DESIGN_PATTERN, "A1")


@dataclass(frozen=True)
class Table1Task:
    spec: DgpSpec
    seed: int
    pretest: PretestConfig

    def __call__(self, rep: int) -> dict:
        sim_seed = derive_seed(self.seed, rep, 0)
        test_seed = derive_seed(self.seed, rep, 1)
        try:
            data = simulate(self.spec, sim_seed)
            fit = fit_var(data, self.pretest.lags, self.pretest.intercept)
            mom = moments_with_covariance(fit, data, self.pretest.covariance, test_seed)
            pe = pretest_ensemble(fit, data, mom, self.pretest, test_seed)
            lvl = self.pretest.level
            _, p_dh, *_ = apply_test(pe.draws.beta2, "dh", lvl)
            _, _, _, ps, _ = apply_test(pe.draws.theta, "lilliefors", lvl)
            return {"ok": True, "dh": p_dh < lvl, "ks": [p < lvl for p in ps], "N": pe.N}
        except Exception as e:  # noqa: BLE001
            return {"ok": False, "error": f"{type(e).__name__}: {e}"}


def _binom_se(p: float, m: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / m) if m else float("nan")


def run_table1(scenarios: Sequence[tuple[str, DgpSpec]], M: int, seed: int = 0,
               pretest: PretestConfig = PretestConfig(), threads: int = 1) -> list[dict]:
    """Rejection frequencies of the pre-test (DH on beta2*, Lilliefors per theta* coordinate)."""
    if M < 1:
        raise ValueError("M must be positive; an empty Monte Carlo table is not defined")
    rows = []
    for si, (name, spec) in enumerate(scenarios):
        task = Table1Task(spec, derive_seed(seed, si), pretest)
        res = ordered_map(task, M, threads)
        good = [r for r in res if r["ok"]]
        m = len(good)
        row = {"scenario": name, "T": spec.T, "innovations": spec.innovations, "reps": M,
               "failures": M - m, "N": good[0]["N"] if good else None}
        p_dh = float(np.mean([r["dh"] for r in good])) if m else float("nan")
        row["DH"] = p_dh
        row["DH_se"] = _binom_se(p_dh, m)
        names = [f"KS_beta2_{i + 1}" for i in range(spec.n)] + ["KS_lambda"]
        for j, nm in enumerate(names):
            pj = float(np.mean([r["ks"][j] for r in good])) if m else float("nan")
            row[nm] = pj
            row[nm + "_se"] = _binom_se(pj, m)
        row["errors"] = sorted({r["error"] for r in res if not r["ok"]})[:5]
        rows.append(row)
    return rows


@dataclass(frozen=True)
class CoverageTask:
    spec: DgpSpec
    seed: int
    level: float
    methods: tuple
    h_max: int
    response: int
    pretest: PretestConfig
    N_hall: int = 199

    def __call__(self, rep: int) -> dict:
        truth = self.spec.true_irf(self.h_max, self.spec.target)[:, self.response]
        sim_seed = derive_seed(self.seed, rep, 0)
        est_seed = derive_seed(self.seed, rep, 1)
        H = self.h_max + 1
        out = {m: np.full(H, np.nan) for m in self.methods}
        out["accepted"] = None
        errors = []
        data = simulate(self.spec, sim_seed)
        fit = fit_var(data, self.pretest.lags, self.pretest.intercept)
        R = design_restrictions()
        if "md-delta" in self.methods or "md-hall" in self.methods:
            try:
                mom = moments_with_covariance(fit, data, self.pretest.covariance, est_seed)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    md = md_estimate(mom, R, MdOptions(seed=est_seed % 2**32))
                if "md-delta" in self.methods:
                    band = delta_method_irf_ci(md, fit, self.level, self.h_max, 0)
                    out["md-delta"] = ((band.lower[:, self.response] <= truth)
                                       & (truth <= band.upper[:, self.response])).astype(float)
                if "md-hall" in self.methods:
                    ens = bootstrap_var_proxy(fit, data, block_length(fit.nobs), self.N_hall,
                                              derive_seed(est_seed, SEED_BANDS))
                    draws = bootstrap_md_irf(ens, R, self.h_max, 0, mom.V_sigma_plus)
                    point = md.B1[:, 0]
                    g = irf_from_companion(fit.companion, fit.n, point, self.h_max)
                    lo, hi = hall_percentile_ci(g, draws, self.level)
                    out["md-hall"] = ((lo[:, self.response] <= truth)
                                      & (truth <= hi[:, self.response])).astype(float)
                pe = pretest_ensemble(fit, data, mom, self.pretest, est_seed)
                _, p, *_ = apply_test(pe.draws.beta2 if self.pretest.vartheta == "beta2"
                                      else pe.draws.theta, self.pretest.test, self.pretest.level)
                out["accepted"] = bool(p >= self.pretest.level)
            except Exception as e:  # noqa: BLE001
                errors.append(f"md: {type(e).__name__}: {e}")
        if "plugin-direct" in self.methods or "robust" in self.methods:
            try:
                T = fit.nobs
                ens = bootstrap_var_proxy(fit, data, block_length(T), self.pretest.covariance.N_cov,
                                          derive_seed(est_seed, 5), which="z")
                Suz = ens.point_Sigma_uw
                if "plugin-direct" in self.methods:
                    Vk = ens.scaled_cov(ens.kappa(include_sigma_u=True))
                    bands = plugin_direct_ci(fit, Suz, Vk, T, self.level, self.h_max)
                    out["plugin-direct"] = ((bands.lower[:, self.response] <= truth)
                                            & (truth <= bands.upper[:, self.response])).astype(float)
                if "robust" in self.methods:
                    Vk = ens.scaled_cov(ens.kappa())
                    B11 = np.asarray(self.spec.B)[:1, :1]
                    crit = stats.chi2.ppf(self.level, df=1)
                    cov = np.empty(H)
                    for h in range(H):
                        W = wald_statistic(fit.Pi, Suz, Vk, T, [truth[h]], B11, h, self.response)
                        cov[h] = float(W <= crit)
                    out["robust"] = cov
            except Exception as e:  # noqa: BLE001
                errors.append(f"z: {type(e).__name__}: {e}")
        out["errors"] = errors
        return out


def run_coverage(spec: DgpSpec, M: int, seed: int = 0, level: float = 0.90,
                 methods: Sequence[str] = ("md-delta",), h_max: int = 12, response: int = 2,
                 pretest: PretestConfig = PretestConfig(), threads: int = 1, N_hall: int = 199
                 ) -> list[dict]:
    """Per-horizon coverage of the chosen interval methods.

    Indirect-MD coverage is also reported conditional on the pre-test
    accepting (relevant proxies) and rejecting.
    """
    if M < 1:
        raise ValueError("M must be positive; an empty Monte Carlo table is not defined")
    bad = set(methods) - set(COVERAGE_METHODS)
    if bad:
        raise ValueError(f"unknown coverage methods: {sorted(bad)}")
    task = CoverageTask(spec, seed, level, tuple(methods), h_max, response, pretest, N_hall)
    res = ordered_map(task, M, threads)
    truth = spec.true_irf(h_max, spec.target)[:, response]
    rows = []
    acc = np.array([r["accepted"] is True for r in res])
    rej = np.array([r["accepted"] is False for r in res])
    for h in range(h_max + 1):
        row = {"h": h, "truth": float(truth[h]), "reps": M}
        for m in methods:
            v = np.array([r[m][h] for r in res])
            ok = ~np.isnan(v)
            row[m] = float(v[ok].mean()) if ok.any() else float("nan")
            row[m + "_na"] = int((~ok).sum())
            if m == "md-delta":
                va, vr = v[acc & ok], v[rej & ok]
                row["md-delta_accept"] = float(va.mean()) if va.size else float("nan")
                row["md-delta_reject"] = float(vr.mean()) if vr.size else float("nan")
                row["pretest_accept_share"] = float(acc.mean())
        rows.append(row)
    return rows
