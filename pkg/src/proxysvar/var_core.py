"""Reduced-form VAR estimation, companion form and impulse responses."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

STABILITY_THRESHOLD = 1.0 - 1e-10


class InsufficientSampleError(ValueError):
    pass


class SingularRegressorError(np.linalg.LinAlgError):
    pass


def _as_matrix(x, name: str) -> Optional[np.ndarray]:
    if x is None:
        return None
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Endogenous series plus optional proxies on a common time index.

    Proxy rows that are unavailable are stored as NaN. ``window_u`` is the
    half-open row range used for the VAR fit; ``window_w`` restricts the
    rows entering proxy cross-moments (default: every row inside
    ``window_u`` where all proxies are finite).
    """

    Y: np.ndarray
    w: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    window_u: Optional[tuple[int, int]] = None
    window_w: Optional[tuple[int, int]] = None
    names: tuple[str, ...] = ()

    def __post_init__(self):
        Y = _as_matrix(self.Y, "Y")
        object.__setattr__(self, "Y", Y)
        if not np.all(np.isfinite(Y)):
            raise ValueError("Y contains non-finite entries")
        for nm in ("w", "z"):
            a = _as_matrix(getattr(self, nm), nm)
            if a is not None:
                if a.shape[0] != Y.shape[0]:
                    raise ValueError(f"{nm} has {a.shape[0]} rows, Y has {Y.shape[0]}")
                if np.any(np.isinf(a)):
                    raise ValueError(f"{nm} contains infinite entries")
            object.__setattr__(self, nm, a)
        T = Y.shape[0]
        wu = self.window_u or (0, T)
        if not (0 <= wu[0] < wu[1] <= T):
            raise ValueError(f"window_u {wu} outside 0..{T}")
        object.__setattr__(self, "window_u", (int(wu[0]), int(wu[1])))
        if self.window_w is not None:
            ww = self.window_w
            if not (wu[0] <= ww[0] < ww[1] <= wu[1]):
                raise ValueError(f"window_w {ww} must lie inside window_u {wu}")
            object.__setattr__(self, "window_w", (int(ww[0]), int(ww[1])))
        if not self.names:
            n = Y.shape[1]
            nm = [f"y{i + 1}" for i in range(n)]
            if self.w is not None:
                nm += [f"w{i + 1}" for i in range(self.w.shape[1])]
            if self.z is not None:
                nm += [f"z{i + 1}" for i in range(self.z.shape[1])]
            object.__setattr__(self, "names", tuple(nm))

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]

    def proxy_mask(self, which: str = "w") -> np.ndarray:
        """Boolean row mask of usable proxy observations."""
        p = getattr(self, which)
        if p is None:
            raise ValueError(f"dataset has no {which} proxies")
        mask = np.all(np.isfinite(p), axis=1)
        lo, hi = self.window_w if (self.window_w and which == "w") else self.window_u
        inside = np.zeros(self.T, dtype=bool)
        inside[lo:hi] = True
        return mask & inside


@dataclass(frozen=True)
class VarFit:
    lags: int
    Pi: np.ndarray
    residuals: np.ndarray
    Sigma_u: np.ndarray
    companion: np.ndarray
    intercept: Optional[np.ndarray]
    resid_rows: np.ndarray
    ZtZ_inv: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.Pi.shape[0]

    @property
    def nobs(self) -> int:
        return self.residuals.shape[0]

    @property
    def selection(self) -> np.ndarray:
        """S_n = (I_n, 0), shape n x nl."""
        n, nl = self.Pi.shape
        return np.eye(n, nl)

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.companion))))

    @property
    def is_stable(self) -> bool:
        return self.spectral_radius < STABILITY_THRESHOLD

    def pi_covariance(self) -> np.ndarray:
        """Asymptotic covariance of vec(Pi_hat) (already divided by T)."""
        nl = self.Pi.shape[1]
        return np.kron(self.ZtZ_inv[:nl, :nl], self.Sigma_u)


def build_companion(Pi: np.ndarray) -> np.ndarray:
    n, nl = Pi.shape
    C = np.zeros((nl, nl))
    C[:n, :] = Pi
    C[n:, :-n] = np.eye(nl - n)
    return C


def lagged_regressors(Y: np.ndarray, lags: int, intercept: bool) -> np.ndarray:
    """Rows (Y_{t-1}', ..., Y_{t-l}'[, 1]) for t = l..T-1."""
    T = Y.shape[0]
    blocks = [Y[lags - i - 1:T - i - 1] for i in range(lags)]
    if intercept:
        blocks.append(np.ones((T - lags, 1)))
    return np.hstack(blocks)


def fit_var(data: TimeSeriesDataset, lags: int, intercept: bool = False) -> VarFit:
    """Least-squares VAR(l) fit on ``data.window_u``."""
    if lags < 1:
        raise ValueError("lag order must be at least 1")
    lo, hi = data.window_u
    Y = data.Y[lo:hi]
    T, n = Y.shape
    if T - lags < n * lags + n + 5:
        raise InsufficientSampleError(
            f"{T} observations are too few for a VAR({lags}) in {n} variables")
    Z = lagged_regressors(Y, lags, intercept)
    Yt = Y[lags:]
    ZtZ = Z.T @ Z
    if np.linalg.cond(ZtZ) > 1e14:
        raise SingularRegressorError(
            "regressor cross-product is singular (collinear or constant series)")
    ZtZ_inv = np.linalg.inv(ZtZ)
    coef = np.linalg.solve(ZtZ, Z.T @ Yt).T
    resid = Yt - Z @ coef.T
    Pi = coef[:, :n * lags]
    c = coef[:, n * lags] if intercept else None
    Sigma = resid.T @ resid / resid.shape[0]
    Sigma = 0.5 * (Sigma + Sigma.T)
    return VarFit(lags=lags, Pi=Pi, residuals=resid, Sigma_u=Sigma,
                  companion=build_companion(Pi), intercept=c,
                  resid_rows=np.arange(lo + lags, hi), ZtZ_inv=ZtZ_inv)


def companion_matrix(fit: VarFit) -> np.ndarray:
    return fit.companion.copy()


@dataclass(frozen=True)
class IrfPath:
    values: np.ndarray
    shock: int
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    level: Optional[float] = None

    @property
    def h_max(self) -> int:
        return self.values.shape[0] - 1


def irf_from_companion(C: np.ndarray, n: int, impact: np.ndarray, h_max: int) -> np.ndarray:
    """Responses S_n C^h S_n' c for h = 0..h_max, shape (h_max+1, n)."""
    state = np.zeros(C.shape[0])
    state[:n] = impact
    out = np.empty((h_max + 1, n))
    for h in range(h_max + 1):
        out[h] = state[:n]
        state = C @ state
    return out


def irf(fit: VarFit, B1: np.ndarray, j: int, h_max: int) -> IrfPath:
    """Impulse responses to structural shock ``j`` (zero-based column of B1)."""
    B1 = np.asarray(B1, dtype=float)
    if B1.ndim == 1:
        B1 = B1[:, None]
    if B1.shape[0] != fit.n:
        raise ValueError(f"B1 has {B1.shape[0]} rows, VAR has {fit.n} variables")
    if not 0 <= j < B1.shape[1]:
        raise ValueError(f"shock index {j} outside 0..{B1.shape[1] - 1}")
    if h_max < 0:
        raise ValueError("h_max must be non-negative")
    vals = irf_from_companion(fit.companion, fit.n, B1[:, j], h_max)
    vals[0] = B1[:, j]
    return IrfPath(values=vals, shock=j)


def irf_pi_jacobian(C: np.ndarray, n: int, impact: np.ndarray, h_max: int) -> np.ndarray:
    """Derivatives of the response vectors w.r.t. vec(Pi).

    Returns an array of shape (h_max+1, n, n*nl) whose slice ``h`` is
    d(S_n C^h S_n' c)/d vec(Pi)' holding the impact vector c fixed.
    """
    nl = C.shape[0]
    states = np.zeros((h_max + 1, nl))
    blocks = np.zeros((h_max + 1, n, n))
    st = np.zeros(nl)
    st[:n] = impact
    P = np.eye(nl)
    for h in range(h_max + 1):
        states[h] = st
        blocks[h] = P[:n, :n]
        st = C @ st
        P = C @ P
    out = np.zeros((h_max + 1, n, n * nl))
    for h in range(1, h_max + 1):
        acc = np.zeros((n, n * nl))
        for j in range(h):
            acc += np.kron(states[h - 1 - j][None, :], blocks[j])
        out[h] = acc
    return out


def read_csv(path: str | Path, endogenous: Sequence[str], proxies_w: Sequence[str] = (),
             proxies_z: Sequence[str] = ()) -> TimeSeriesDataset:
    """Load a dataset from a headed CSV file.

    Empty proxy cells become NaN and drop out of the proxy window; empty
    cells in endogenous columns are an error.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [r for r in reader if any(c.strip() for c in r)]
    missing = [c for c in (*endogenous, *proxies_w, *proxies_z) if c not in header]
    if missing:
        raise KeyError(f"columns not found in {path}: {', '.join(missing)}")

    def column(name: str, allow_empty: bool) -> np.ndarray:
        idx = header.index(name)
        out = np.empty(len(rows))
        for t, r in enumerate(rows):
            cell = r[idx].strip() if idx < len(r) else ""
            if cell == "":
                if not allow_empty:
                    raise ValueError(f"empty cell in endogenous column {name!r}, row {t + 2}")
                out[t] = np.nan
            else:
                out[t] = float(cell)
        return out

    Y = np.column_stack([column(c, False) for c in endogenous])
    w = np.column_stack([column(c, True) for c in proxies_w]) if proxies_w else None
    z = np.column_stack([column(c, True) for c in proxies_z]) if proxies_z else None
    return TimeSeriesDataset(Y=Y, w=w, z=z,
                             names=tuple(endogenous) + tuple(proxies_w) + tuple(proxies_z))
