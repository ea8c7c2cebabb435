"""Nash follower: the minimiser of the tracking cost for a fixed leader.

For a leader trace ``w1`` the follower minimises

    J2(w2) = 1/2 <k^n (v - v2), v - v2>_Q + sigma/2 |w2|^2_Sigma

where ``v`` solves the wave problem with Dirichlet data ``w1`` and ``w2``.
The cost is a strictly convex quadratic in ``w2``; its Sigma-gradient is
``sigma w2 + B2*(k^n (v - v2))``, and ``B2*`` is evaluated as the conormal
trace of the backward (transposed) solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import BoundaryControl, SpaceTimeField, norm_l2_sigma
from .errors import NoConvergence
from .fixed_point import relaxed_picard


@dataclass
class FollowerProblem:
    """Data of the follower's minimisation.

    ``v2`` is the tracking target on the cylinder and ``sigma > 0`` the
    control penalty.  ``w1`` lives on the leader segment of ``geom``.
    """

    solver: object
    geom: object
    w1: BoundaryControl
    v2: SpaceTimeField
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        g = self.grid
        if self.v2.values.shape != (g.nt + 1, g.nx + 1):
            raise ValueError("v2 does not conform to the grid")
        if self.w1.samples.shape != (g.nt + 1,):
            raise ValueError("w1 does not conform to the grid")

    @property
    def grid(self):
        return self.solver.grid

    @property
    def segments(self):
        return self.geom.segments(self.grid.T)

    @property
    def mask2(self):
        return self.segments[1].mask(self.grid.t)

    def with_leader(self, w1):
        return FollowerProblem(self.solver, self.geom, w1, self.v2, self.sigma)


@dataclass
class FollowerSolution:
    w2: BoundaryControl
    v: SpaceTimeField
    p: SpaceTimeField
    j2: float
    euler_residual: float
    iterations: int


def _samples(w):
    return w.samples if isinstance(w, BoundaryControl) else np.asarray(w, dtype=float)


def dirichlet_traces(grid, *controls):
    """Sum boundary controls into ``(left, right)`` trace arrays."""
    left = np.zeros(grid.nt + 1)
    right = np.zeros(grid.nt + 1)
    for seg, samples in controls:
        if seg.side == "left":
            left = left + samples
        else:
            right = right + samples
    return left, right


def state(problem, w2):
    """Forward state for the pair ``(w1, w2)``."""
    seg1, seg2 = problem.segments
    traces = dirichlet_traces(problem.grid, (seg1, problem.w1.samples),
                              (seg2, _samples(w2) * problem.mask2))
    return problem.solver.march_forward(dirichlet=traces)


def tracking_weights(solver):
    """Per-level weights of the space-time tracking sum: ``dt*dy*trapezoid*k^n``."""
    g = solver.grid
    return g.dt * g.dy * g.time_weights * solver.kn


def tracking_term(solver, v, v2):
    d = v.values[:, 1:-1] - v2.values[:, 1:-1]
    return 0.5 * float(np.sum(tracking_weights(solver)[:, None] * d**2))


def adjoint(problem, v):
    """Backward solve with load ``k^n (v - v2)``."""
    s = problem.solver
    rhs = s.kn[:, None] * (v.values - problem.v2.values)
    return s.march_backward(rhs=rhs)


def j2_value(problem, w2):
    w2 = _samples(w2) * problem.mask2
    v = state(problem, w2)
    return tracking_term(problem.solver, v, problem.v2) + 0.5 * problem.sigma * norm_l2_sigma(
        w2, problem.grid.dt) ** 2


def _gradient(problem, w2):
    w2 = _samples(w2) * problem.mask2
    v = state(problem, w2)
    p = adjoint(problem, v)
    seg2 = problem.segments[1]
    grad = problem.sigma * w2 + problem.mask2 * problem.solver.conormal_trace(p, seg2.side)
    return grad, v, p


def j2_gradient(problem, w2):
    """Sigma-gradient of J2 with respect to the follower trace."""
    grad, _, _ = _gradient(problem, w2)
    return BoundaryControl(problem.segments[1], grad)


def _hessian(problem, z):
    """Apply ``sigma I + B2* k^n B2`` to a follower trace."""
    s = problem.solver
    seg2 = problem.segments[1]
    z = z * problem.mask2
    dz = s.boundary_to_state(seg2.side, z)
    p = s.march_backward(rhs=s.kn[:, None] * dz.values)
    return problem.sigma * z + problem.mask2 * s.conormal_trace(p, seg2.side)


def solve_follower(problem, tol=1e-10, max_iter=500, w2_init=None):
    """Minimise J2 by conjugate gradients in the Sigma inner product.

    Converged when ``|grad J2|_Sigma <= tol * max(1, |w2|_Sigma)``.
    """
    g = problem.grid
    dt = g.dt
    mask = problem.mask2

    def ip(a, b):
        return dt * float(np.dot(a, b))

    x = np.zeros(g.nt + 1) if w2_init is None else _samples(w2_init) * mask
    grad, v, p = _gradient(problem, x)
    r = -grad
    d = r.copy()
    rr = ip(r, r)
    it = 0
    history = [np.sqrt(rr)]
    while True:
        target = tol * max(1.0, np.sqrt(ip(x, x)))
        if np.sqrt(rr) <= target:
            # confirm with a fresh gradient; restart if recursion drifted
            grad, v, p = _gradient(problem, x)
            r = -grad
            rr = ip(r, r)
            if np.sqrt(rr) <= target:
                break
            d = r.copy()
        if it >= max_iter:
            best = BoundaryControl(problem.segments[1], x)
            raise NoConvergence(
                f"follower CG did not reach {tol:g} in {max_iter} iterations",
                best=best, history=history)
        hd = _hessian(problem, d)
        alpha = rr / ip(d, hd)
        x = x + alpha * d
        r = r - alpha * hd
        rr_new = ip(r, r)
        d = r + (rr_new / rr) * d
        rr = rr_new
        it += 1
        history.append(np.sqrt(rr))
    j2 = tracking_term(problem.solver, v, problem.v2) + 0.5 * problem.sigma * ip(x, x)
    return FollowerSolution(BoundaryControl(problem.segments[1], x), v, p, j2,
                            float(np.sqrt(rr)), it)


def follower_update(problem, w2):
    """One sweep of the optimality system: ``w2 -> -(1/sigma) B2*(k^n (v - v2))``."""
    v = state(problem, w2)
    p = adjoint(problem, v)
    seg2 = problem.segments[1]
    return -problem.mask2 * problem.solver.conormal_trace(p, seg2.side) / problem.sigma


def solve_optimality_system(problem, tol=1e-10, relaxation=0.5, max_iter=500, w2_init=None):
    """Relaxed Picard sweeps on the coupled state/adjoint system.

    Returns ``(v, p, w2)``.  Raises :class:`NoConvergence` (with the residual
    history) when the sweep stalls or diverges; a smaller ``relaxation`` or
    :func:`solve_follower` are the remedies.
    """
    g = problem.grid
    x0 = np.zeros(g.nt + 1) if w2_init is None else _samples(w2_init)
    sqdt = np.sqrt(g.dt)

    # iterate in Sigma-normalised coordinates so tolerances match |.|_Sigma
    res = relaxed_picard(lambda z: sqdt * follower_update(problem, z / sqdt), sqdt * x0,
                         tol, relaxation, max_iter)
    w2 = res.x / sqdt
    if not res.converged:
        raise NoConvergence(
            f"optimality-system sweep stalled at residual {res.residual:.3e} "
            f"(contraction estimate {res.contraction_estimate:.3f}); "
            "reduce the relaxation or use solve_follower",
            best=BoundaryControl(problem.segments[1], w2), history=res.history)
    v = state(problem, w2)
    p = adjoint(problem, v)
    return v, p, BoundaryControl(problem.segments[1], w2)
