"""Trust-region Gauss-Newton least squares with seeded restarts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import least_squares


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptResult:
    x: np.ndarray
    objective: float
    grad_norm: float
    converged: bool
    restarts: int
    nfev: int


def minimize_residual(fun: Callable[[np.ndarray], np.ndarray],
                      jac: Callable[[np.ndarray], np.ndarray],
                      x0: np.ndarray,
                      gtol: float = 1e-9,
                      max_iter: int = 500,
                      restarts: int = 5,
                      seed: int = 0,
                      raise_on_failure: bool = False) -> OptResult:
    """Minimize ||fun(x)||^2 from ``x0``.

    When the first run does not meet the stopping rule, up to ``restarts``
    further runs start from seeded perturbations of ``x0`` and the best
    converged solution is kept.
    """
    x0 = np.asarray(x0, dtype=float)
    rng = None
    best = None
    total = 0
    for attempt in range(restarts + 1):
        if attempt == 0:
            start = x0
        else:
            if rng is None:
                rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7919,)))
            start = x0 + rng.standard_normal(x0.shape) * (0.5 * np.abs(x0) + 0.1)
        res = least_squares(fun, start, jac=jac, method="trf", gtol=gtol, ftol=1e-12,
                            xtol=1e-12, max_nfev=max_iter, x_scale=1.0)
        total += res.nfev
        r = res.fun
        g = res.jac.T @ r
        cand = OptResult(res.x, float(r @ r), float(np.max(np.abs(g))) if g.size else 0.0,
                         bool(res.status > 0), attempt, total)
        if best is None or (cand.converged and (not best.converged or cand.objective < best.objective)):
            best = cand
        if cand.converged:
            break
    best = OptResult(best.x, best.objective, best.grad_norm, best.converged, best.restarts, total)
    if raise_on_failure and not best.converged:
        raise ConvergenceError(
            f"optimizer failed to converge after {restarts} restarts (gradient norm {best.grad_norm:.3g})")
    return best
