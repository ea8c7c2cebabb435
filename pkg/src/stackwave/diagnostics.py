"""Residuals, pairing identities, energy and refinement studies."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .discretization import Grid, WaveSolver, norm_l2_sigma
from .follower import j2_gradient
from .leader import (
    DualVariable,
    HierarchicProblem,
    apply_A,
    apply_A_star,
    terminal_pairing,
)
from .scale import ScaleFunction, eval_coefficients


def residual_pde(solver, field, rhs=None, which="L", terminal=None, delta=0.0,
                 init_velocity=None):
    """Max-norm residual of the forward (``L``) or transposed (``L*``) scheme."""
    if which == "L":
        r = solver.residual_forward(field, source=rhs, init_velocity=init_velocity)
    elif which == "L*":
        r = solver.residual_backward(field, rhs=rhs, terminal=terminal, delta=delta)
    else:
        raise ValueError("which must be 'L' or 'L*'")
    return float(np.max(np.abs(r))) if r.size else 0.0


def euler_residual(problem, solution):
    """Sigma-norm of the follower gradient at ``solution``."""
    w2 = solution.w2 if hasattr(solution, "w2") else solution
    return norm_l2_sigma(j2_gradient(problem, w2).samples, problem.grid.dt)


def discrete_energy(field):
    """Conserved leapfrog energy for ``k = 1`` and homogeneous data.

    ``E^m = 1/2 |(v^{m+1} - v^m)/dt|^2 + 1/2 (D v^{m+1}, D v^m)`` with ``D``
    the forward difference and dy-weighted sums; one value per step.
    """
    g = field.grid
    V = field.values
    vel = np.diff(V, axis=0) / g.dt
    grad = np.diff(V, axis=1) / g.dy
    kinetic = 0.5 * g.dy * np.sum(vel[:, 1:-1] ** 2, axis=1)
    potential = 0.5 * g.dy * np.sum(grad[1:] * grad[:-1], axis=1)
    return kinetic + potential


def report(check, seed, samples, max_violation, threshold):
    """The JSON report of a sampled check."""
    v = float(max_violation)
    return {
        "check": check,
        "seed": int(seed) if seed is not None else None,
        "samples": int(samples),
        "max_violation": v,
        "pass": bool(math.isfinite(v) and v <= threshold),
    }


def duality_identity_check(problem, n_samples=50, seed=0, star_problem=None, threshold=1e-10):
    """Worst relative defect of ``<<A w, f>> = <w, A* f>`` over random pairs.

    ``star_problem`` evaluates A* with different data (e.g. another sigma)
    to probe that the check detects an inconsistent pair.
    """
    rng = np.random.default_rng(seed)
    g = problem.grid
    star = problem if star_problem is None else star_problem
    worst = 0.0
    for _ in range(n_samples):
        w = problem.leader_control(rng.standard_normal(g.nt + 1))
        f = DualVariable(rng.standard_normal(g.nx + 1), rng.standard_normal(g.nx + 1))
        eta, zeta, _ = apply_A(problem, w)
        lhs = terminal_pairing(eta, zeta, f)
        rhs = g.dt * float(w.samples @ apply_A_star(star, f).samples)
        scale = max(abs(lhs), abs(rhs), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return report("duality_identity", seed, n_samples, worst, threshold)


def transpose_check(solver, n_samples=50, seed=0, threshold=1e-12):
    """Worst ``|<B w, r>_Q - <w, B* r>_Sigma| / (|w| |r|)`` on both ends."""
    rng = np.random.default_rng(seed)
    g = solver.grid
    wts = g.dt * g.dy * g.time_weights
    worst = 0.0
    for i in range(n_samples):
        side = ("left", "right")[i % 2]
        w = rng.standard_normal(g.nt + 1)
        r = rng.standard_normal((g.nt + 1, g.nx + 1))
        bw = solver.boundary_to_state(side, w).values
        lhs = float(np.sum(wts[:, None] * bw[:, 1:-1] * r[:, 1:-1]))
        rhs = g.dt * float(w @ solver.conormal_trace(solver.march_backward(rhs=r), side))
        scale = np.linalg.norm(w) * np.linalg.norm(r)
        worst = max(worst, abs(lhs - rhs) / scale)
    return report("transpose", seed, n_samples, worst, threshold)


# -- refinement studies -------------------------------------------------------------


@dataclass
class ConvergenceReport:
    levels: list
    errors: list
    rates: list = field(default_factory=list)

    def __post_init__(self):
        if not self.rates:
            self.rates = [float(np.log2(a / b)) if b > 0 else float("inf")
                          for a, b in zip(self.errors[:-1], self.errors[1:])]

    @property
    def ratios(self):
        return [a / b for a, b in zip(self.errors[:-1], self.errors[1:])]

    def to_dict(self):
        return {"levels": [list(lv) for lv in self.levels], "errors": list(self.errors),
                "rates": list(self.rates)}


def convergence_study(error_of, levels, workers=1):
    """Evaluate ``error_of(nx, nt)`` on each level; rates are log2 ratios.

    Levels may run in a thread pool; results are ordered by level.
    """
    levels = [tuple(lv) for lv in levels]
    if workers > 1 and len(levels) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            errors = list(ex.map(lambda lv: float(error_of(*lv)), levels))
    else:
        errors = [float(error_of(*lv)) for lv in levels]
    return ConvergenceReport(levels, errors)


def standing_wave_error(nx, nt, T=2.0):
    """Max-norm error against ``sin(pi y) cos(pi t)`` for ``k = 1``."""
    k = ScaleFunction.constant(1.0, T)
    g = Grid(nx, nt, T)
    solver = WaveSolver(k, g)
    v = solver.march_forward(init=(np.sin(np.pi * g.y), np.zeros(nx + 1)))
    exact = np.sin(np.pi * g.y)[None, :] * np.cos(np.pi * g.t)[:, None]
    return float(np.max(np.abs(v.values - exact)))


def manufactured_source(k, y, t, derivs, n=1):
    """``v'' + L v`` from the derivatives of an exact solution.

    ``derivs`` maps ``tt, y, yy, ty`` to arrays evaluated at ``(y, t)``.
    """
    a, b, c = eval_coefficients(k, y, t, n)
    a_y = -2.0 * k.d1(t) ** 2 * y / k.value(t) ** 2
    return (derivs["tt"] - a_y * derivs["y"] - a * derivs["yy"]
            + b * derivs["ty"] + c * derivs["y"])


def _smooth_solution(y, t):
    """``v = sin(pi y) cos(t)`` and its derivatives."""
    s, cs = np.sin(np.pi * y), np.cos(np.pi * y)
    return {
        "v": s * np.cos(t),
        "t": -s * np.sin(t),
        "tt": -s * np.cos(t),
        "y": np.pi * cs * np.cos(t),
        "yy": -np.pi**2 * s * np.cos(t),
        "ty": -np.pi * cs * np.sin(t),
    }


def manufactured_error(k, nx, nt, solution=_smooth_solution):
    """Max-norm error of the forward march against a manufactured solution."""
    g = Grid(nx, nt, k.horizon)
    solver = WaveSolver(k, g)
    Y, Tm = g.y[None, :], g.t[:, None]
    d = solution(Y, Tm)
    src = manufactured_source(k, Y, Tm, d) + np.zeros((g.nt + 1, g.nx + 1))
    d0 = solution(g.y, np.zeros(1))
    exact = d["v"] + np.zeros((g.nt + 1, g.nx + 1))
    v = solver.march_forward(dirichlet=(exact[:, 0], exact[:, -1]), source=src,
                             init=(d0["v"], d0["t"]))
    return float(np.max(np.abs(v.values - exact)))


def cone_support(solver, side, level):
    """Largest distance from ``side`` reached by a unit impulse at ``level``.

    Returns ``(reach, bound)`` where ``bound`` is the number of cells the
    explicit stencil can cover, one per step, plus one.
    """
    g = solver.grid
    trace = np.zeros(g.nt + 1)
    trace[level] = 1.0
    v = solver.boundary_to_state(side, trace).values
    nz = np.abs(v) > 0
    reach = np.zeros(g.nt + 1, dtype=int)
    for m in range(g.nt + 1):
        idx = np.flatnonzero(nz[m])
        if idx.size:
            reach[m] = (g.nx - idx.min()) if side == "right" else idx.max()
    bound = np.maximum(0, np.arange(g.nt + 1) - level) + 1
    bound[:level] = 0
    return reach, bound


def problem_with_sigma(problem, sigma):
    """Copy of a hierarchic problem with another follower penalty."""
    return HierarchicProblem(problem.solver, problem.geom, problem.v2, sigma, problem.delta,
                             problem.tol, problem.relaxation, problem.max_iter, problem.method)

