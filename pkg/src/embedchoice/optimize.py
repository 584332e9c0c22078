"""BFGS minimizer with backtracking line search, plus finite-difference helpers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    converged: bool
    iterations: int
    n_evals: int
    message: str


def bfgs(
    fun_grad: Callable,
    x0,
    gtol: float = 1e-6,
    ftol: float = 1e-9,
    max_iter: int = 500,
    h0: np.ndarray | None = None,
    max_step: float = 10.0,
) -> OptimizeResult:
    """Minimize ``fun_grad(x) -> (f, g)``.

    Stops when ``max|g| < gtol`` or when an accepted step changes ``f`` by
    less than ``ftol`` relative to ``max(|f|, 1)``. ``h0`` is an optional
    initial inverse-Hessian approximation.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fun_grad(x)
    n_evals = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return OptimizeResult(x, f, g, False, 0, n_evals, "non-finite objective at start")
    n = x.size
    H = np.eye(n) if h0 is None else np.array(h0, dtype=np.float64)
    scaled = h0 is not None
    c1 = 1e-4
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g), initial=0.0) < gtol:
            return OptimizeResult(x, f, g, True, it - 1, n_evals, "gradient tolerance reached")
        d = -H @ g
        slope = float(g @ d)
        if not slope < 0:
            H = np.eye(n)
            d = -g
            slope = float(g @ d)
        big = np.max(np.abs(d))
        t = min(1.0, max_step / big) if big > 0 else 1.0
        while True:
            xn = x + t * d
            fn, gn = fun_grad(xn)
            n_evals += 1
            if np.isfinite(fn) and np.all(np.isfinite(gn)) and fn <= f + c1 * t * slope:
                break
            t *= 0.5
            if t < 1e-14:
                return OptimizeResult(x, f, g, False, it, n_evals, "line search failed")
        s = xn - x
        y = gn - g
        change = abs(f - fn) / max(abs(f), 1.0)
        x, f, g = xn, fn, gn
        if change < ftol:
            return OptimizeResult(x, f, g, True, it, n_evals, "objective change tolerance reached")
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                H = np.eye(n) * (sy / float(y @ y))
                scaled = True
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
    return OptimizeResult(x, f, g, False, max_iter, n_evals, "iteration limit reached")


def central_difference_gradient(fun: Callable, x, rel_step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for k in range(x.size):
        h = rel_step * max(abs(x[k]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        out[k] = (fun(xp) - fun(xm)) / (2 * h)
    return out


def numeric_hessian(grad: Callable, x, rel_step: float = 1e-5) -> np.ndarray:
    """Symmetrized central-difference Jacobian of an analytic gradient."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    H = np.empty((n, n))
    for k in range(n):
        h = rel_step * max(abs(x[k]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        H[:, k] = (grad(xp) - grad(xm)) / (2 * h)
    return 0.5 * (H + H.T)
