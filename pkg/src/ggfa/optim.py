"""Limited-memory BFGS with projected backtracking line search.

Minimizes a smooth function subject to optional elementwise lower bounds.
Each accepted step satisfies the Armijo sufficient-decrease condition, so
the recorded objective trace never increases.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str
    trace: np.ndarray


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        beta = rho * (y @ q)
        q += (a - beta) * s
    return -q


def minimize_lbfgs(
    fun,
    x0,
    lower=None,
    max_iters: int = 2000,
    grad_tol: float = 1e-6,
    rel_tol: float = 1e-9,
    rel_window: int = 5,
    memory: int = 10,
    c1: float = 1e-4,
    max_backtracks: int = 50,
) -> OptimResult:
    """Minimize ``fun`` where ``fun(x) -> (value, gradient)``.

    Stops when the projected gradient norm drops below ``grad_tol`` or the
    relative objective change over ``rel_window`` iterations is below
    ``rel_tol``.
    """
    x = np.array(x0, dtype=float)
    lo = None if lower is None else np.asarray(lower, dtype=float)
    if lo is not None:
        x = np.maximum(x, lo)
    f, g = fun(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise FloatingPointError("objective is not finite at the starting point")
    trace = [f]
    pairs: deque = deque(maxlen=memory)

    def projected(grad, point):
        if lo is None:
            return grad
        pg = grad.copy()
        pg[(point <= lo) & (grad > 0)] = 0.0
        return pg

    message = "maximum iterations reached"
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        pg = projected(g, x)
        if np.linalg.norm(pg) <= grad_tol:
            converged, message = True, "gradient tolerance reached"
            it -= 1
            break
        d = _two_loop(pg, list(pairs))
        if lo is not None:
            d[(x <= lo) & (d < 0)] = 0.0
        slope = g @ d
        if not slope < 0:
            pairs.clear()
            d = -pg
            slope = g @ d
        t = 1.0 if pairs else min(1.0, 1.0 / max(np.linalg.norm(d), 1e-12))

        accepted = False
        for _ in range(max_backtracks):
            x_new = x + t * d
            if lo is not None:
                x_new = np.maximum(x_new, lo)
            step = x_new - x
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and np.all(np.isfinite(g_new)) and f_new <= f + c1 * (g @ step):
                accepted = True
                break
            if np.isfinite(f_new):
                # safeguarded quadratic interpolation
                denom = 2.0 * (f_new - f - t * slope)
                t_new = -slope * t * t / denom if denom > 0 else 0.5 * t
                t = float(np.clip(t_new, 0.1 * t, 0.5 * t))
            else:
                t *= 0.1
        if not accepted:
            if pairs:
                pairs.clear()
                continue
            message = "line search failed to make progress"
            converged = np.linalg.norm(pg) <= 10 * grad_tol
            break

        s, yv = step, g_new - g
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            pairs.append((s, yv, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        if len(trace) > rel_window:
            ref = trace[-1 - rel_window]
            if abs(ref - f) <= rel_tol * max(1.0, abs(f)):
                converged, message = True, "relative tolerance reached"
                break

    return OptimResult(x, f, g, it, converged, message, np.asarray(trace))
