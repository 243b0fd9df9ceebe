"""Vectorization operators and small matrix utilities.

Conventions: ``vec`` stacks columns (Fortran order), ``vech`` stacks the
lower-triangular part column by column.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


def vec(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=float).reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape((rows, cols), order="F")


@lru_cache(maxsize=64)
def _vech_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = [], []
    for j in range(n):
        for i in range(j, n):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def vech(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    r, c = _vech_index(a.shape[-1])
    return a[..., r, c]


def unvech(v: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    r, c = _vech_index(n)
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., r, c] = v
    out[..., c, r] = v
    return out


@lru_cache(maxsize=64)
def _duplication(n: int) -> np.ndarray:
    r, c = _vech_index(n)
    d = np.zeros((n * n, len(r)))
    for p, (i, j) in enumerate(zip(r, c)):
        d[i + j * n, p] = 1.0
        d[j + i * n, p] = 1.0
    d.setflags(write=False)
    return d


def duplication(n: int) -> np.ndarray:
    """D_n with vec(A) = D_n vech(A) for symmetric A."""
    return _duplication(n)


@lru_cache(maxsize=64)
def _duplication_pinv(n: int) -> np.ndarray:
    d = _duplication(n)
    # D'D is diagonal with entries 1 (diagonal) or 2 (off-diagonal)
    out = d.T / np.diag(d.T @ d)[:, None]
    out.setflags(write=False)
    return out


def duplication_pinv(n: int) -> np.ndarray:
    """Moore-Penrose inverse (D'D)^{-1}D' of the duplication matrix."""
    return _duplication_pinv(n)


@lru_cache(maxsize=64)
def _commutation(m: int, n: int) -> np.ndarray:
    k = np.zeros((m * n, m * n))
    for i in range(m):
        for j in range(n):
            k[i * n + j, j * m + i] = 1.0
    k.setflags(write=False)
    return k


def commutation(m: int, n: int) -> np.ndarray:
    """K_{m,n} with K vec(A) = vec(A') for A of shape m x n."""
    return _commutation(m, n)


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def inv_sqrt_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root of a positive-definite matrix."""
    w, v = np.linalg.eigh(sym(a))
    if np.any(w <= 0):
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return (v / np.sqrt(w)) @ v.T


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.solve(sym(a), b)
