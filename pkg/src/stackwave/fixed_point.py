"""Relaxed Picard iteration for affine fixed points, with a Krylov fallback."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

log = logging.getLogger(__name__)


@dataclass
class FixedPointResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    method: str = "picard"
    history: list = field(default_factory=list)

    @property
    def contraction_estimate(self):
        """Geometric mean of the last few residual ratios."""
        h = [r for r in self.history if r > 0]
        if len(h) < 3:
            return float("nan")
        tail = h[-6:]
        return float((tail[-1] / tail[0]) ** (1.0 / (len(tail) - 1)))


def relaxed_picard(fmap, x0, tol, relaxation=0.5, max_iter=500, stall_window=8,
                   stall_ratio=0.98):
    """Iterate ``x <- (1 - theta) x + theta fmap(x)``.

    Stops when ``|fmap(x) - x| <= tol * max(1, |x|)``, when the residual has
    not dropped by ``stall_ratio`` over ``stall_window`` iterations, or when
    it grows by more than 1e3 over its minimum.  Never raises.
    """
    x = np.array(x0, dtype=float)
    history = []
    for it in range(max_iter + 1):
        fx = fmap(x)
        res = float(np.linalg.norm(fx - x))
        history.append(res)
        if res <= tol * max(1.0, float(np.linalg.norm(x))):
            return FixedPointResult(x, it, res, True, "picard", history)
        if it == max_iter:
            break
        if len(history) > stall_window and res > stall_ratio * history[-1 - stall_window]:
            break
        if res > 1e3 * min(history):
            break
        x = (1.0 - relaxation) * x + relaxation * fx
    return FixedPointResult(x, len(history) - 1, history[-1], False, "picard", history)


def krylov_fixed_point(fmap, x0, tol, max_iter=500, history=None):
    """Solve the affine fixed point ``x = fmap(x)`` with GMRES.

    ``fmap(x) = M x + c`` is only accessed through evaluations.
    """
    x0 = np.array(x0, dtype=float)
    c = fmap(np.zeros_like(x0))
    n = x0.size

    def matvec(v):
        v = np.asarray(v, dtype=float).reshape(x0.shape)
        return (v - (fmap(v) - c)).ravel()

    op = LinearOperator((n, n), matvec=matvec, dtype=float)
    hist = list(history or [])
    scale = max(1.0, float(np.linalg.norm(c)))
    x, info = gmres(op, c.ravel(), x0=x0.ravel(), rtol=0.0, atol=0.1 * tol * scale,
                    restart=min(n, 200), maxiter=max_iter)
    x = x.reshape(x0.shape)
    # polish: a couple of refinement sweeps on the true residual
    for _ in range(3):
        res = fmap(x) - x
        rn = float(np.linalg.norm(res))
        hist.append(rn)
        if rn <= tol * max(1.0, float(np.linalg.norm(x))):
            return FixedPointResult(x, len(hist), rn, True, "krylov", hist)
        dx, info = gmres(op, res.ravel(), rtol=0.0, atol=0.1 * tol * max(1.0, float(np.linalg.norm(x))),
                         restart=min(n, 200), maxiter=max_iter)
        x = x + dx.reshape(x0.shape)
    res = float(np.linalg.norm(fmap(x) - x))
    hist.append(res)
    ok = res <= tol * max(1.0, float(np.linalg.norm(x)))
    return FixedPointResult(x, len(hist), res, ok, "krylov", hist)


def solve_affine_fixed_point(fmap, x0, tol, relaxation=0.5, max_iter=500):
    """Picard first; on stagnation or divergence continue with GMRES."""
    res = relaxed_picard(fmap, x0, tol, relaxation, max_iter)
    if res.converged:
        return res
    log.info("Picard stalled after %d iterations (residual %.3e); switching to GMRES",
             res.iterations, res.residual)
    kr = krylov_fixed_point(fmap, res.x if np.isfinite(res.residual) and res.residual < 1e3 * min(res.history) else x0,
                            tol, max_iter, res.history)
    kr.iterations += res.iterations
    return kr
