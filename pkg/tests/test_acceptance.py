"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES
from scipy.linalg import cholesky, solve_triangular

from stackwave.cli import run_config
from stackwave.diagnostics import duality_identity_check, standing_wave_error, transpose_check
from stackwave.discretization import BoundaryControl, Grid, SpaceTimeField, WaveSolver
from stackwave.errors import HyperbolicityViolation
from stackwave.follower import (
    FollowerProblem,
    j2_value,
    solve_follower,
    solve_optimality_system,
    state,
    tracking_weights,
)
from stackwave.leader import (
    ControllabilityTarget,
    DualVariable,
    HierarchicProblem,
    apply_A,
    check_variational_inequality,
    minimize_dual,
    solve_affine_part,
)
from stackwave.scale import Geometry, ScaleFunction

pytestmark = pytest.mark.acceptance


def record(n, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed < budget
    line = (f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}  "
            f"[{elapsed:.2f} s, budget {budget:g} s]")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def sin_solver(nx, nt, T=2.4):
    return WaveSolver(ScaleFunction.sinusoidal(0.1, 1.0, 1.0, T), Grid(nx, nt, T))


@pytest.fixture(scope="module")
def benchmark():
    """k = 1 + 0.1 sin t, additive on the right end, T = 2.4, nx = 64, sigma = 10."""
    start = time.perf_counter()
    s = sin_solver(64, 256)
    g = s.grid
    v0 = 0.3 * np.sin(np.pi * g.y)
    v0[[0, -1]] = 0.0
    rho = 0.1 * float(np.sqrt(g.dy * np.sum(v0**2)))
    target = ControllabilityTarget(v0, np.zeros(g.nx + 1), rho, rho)
    prob = HierarchicProblem(s, Geometry("right", "additive"), sigma=10.0, delta=0.0)
    res = minimize_dual(prob, target)
    return prob, target, res, time.perf_counter() - start


def test_criterion_1_scheme_order():
    start = time.perf_counter()
    errs = [standing_wave_error(nx, nt, 2.0) for nx, nt in ((32, 160), (64, 320), (128, 640))]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = all(3.2 <= r <= 4.8 for r in ratios)
    record(1, ok, f"standing-wave error ratios {ratios[0]:.4f}, {ratios[1]:.4f} (need [3.2, 4.8])",
           time.perf_counter() - start, 10)


def test_criterion_2_discrete_adjointness():
    start = time.perf_counter()
    s = sin_solver(16, 64)
    tr = transpose_check(s, n_samples=50, seed=1)
    prob = HierarchicProblem(s, Geometry("right", "additive"), sigma=10.0)
    du = duality_identity_check(prob, n_samples=50, seed=2)
    ok = tr["max_violation"] <= 1e-12 and du["max_violation"] <= 1e-10
    record(2, ok, f"transpose defect {tr['max_violation']:.2e} (<= 1e-12), "
                  f"A/A* defect {du['max_violation']:.2e} (<= 1e-10), 50 pairs each",
           time.perf_counter() - start, 30)


def _follower_dense(problem):
    s = problem.solver
    g = s.grid
    G, active = s.boundary_matrix(problem.segments[1])
    Gf = G.reshape(-1, active.size)
    W = np.repeat(tracking_weights(s), g.nx - 1)
    base = (state(problem, np.zeros(g.nt + 1)).values[:, 1:-1]
            - problem.v2.values[:, 1:-1]).ravel()
    H = problem.sigma * g.dt * np.eye(active.size) + Gf.T @ (W[:, None] * Gf)
    out = np.zeros(g.nt + 1)
    out[active] = np.linalg.solve(H, -Gf.T @ (W * base))
    return out


def test_criterion_3_nash_follower():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    s = sin_solver(16, 64)
    g = s.grid
    geom = Geometry("right", "additive")
    worst_oracle = worst_euler = worst_drop = 0.0
    for sigma in (0.1, 1.0, 10.0):
        w1 = BoundaryControl.on(geom.segments(g.T)[0], rng.standard_normal(g.nt + 1), g)
        v2 = SpaceTimeField(rng.standard_normal((g.nt + 1, g.nx + 1)), g)
        prob = FollowerProblem(s, geom, w1, v2, sigma)
        sol = solve_follower(prob)
        want = _follower_dense(prob)
        worst_oracle = max(worst_oracle, np.max(np.abs(sol.w2.samples - want)))
        worst_euler = max(worst_euler, sol.euler_residual)
        j = j2_value(prob, sol.w2)
        for _ in range(20):
            z = rng.standard_normal(g.nt + 1)
            for eps in (1e-2, 1e-3):
                worst_drop = max(worst_drop, j - j2_value(prob, sol.w2.samples + eps * z))
    ok = worst_oracle <= 1e-8 and worst_euler <= 1e-10 and worst_drop <= 1e-12
    record(3, ok, f"CG vs dense {worst_oracle:.2e} (<= 1e-8), Euler residual {worst_euler:.2e} "
                  f"(<= 1e-10), largest J2 decrease {worst_drop:.2e} (<= 1e-12)",
           time.perf_counter() - start, 60)


def test_criterion_4_optimality_system():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    s = sin_solver(16, 64)
    g = s.grid
    geom = Geometry("right", "additive")
    w1 = BoundaryControl.on(geom.segments(g.T)[0], rng.standard_normal(g.nt + 1), g)
    prob = FollowerProblem(s, geom, w1, SpaceTimeField(rng.standard_normal((g.nt + 1, g.nx + 1)), g),
                           10.0)
    cg = solve_follower(prob, tol=1e-12).w2.samples
    _, _, w2 = solve_optimality_system(prob, tol=1e-11)
    diff = float(np.max(np.abs(w2.samples - cg)))
    record(4, diff <= 1e-6, f"fixed point vs CG {diff:.2e} (<= 1e-6) at sigma = 10",
           time.perf_counter() - start, 30)


def test_criterion_5_approximate_controllability(benchmark):
    prob, target, res, elapsed = benchmark
    ok = (res.converged and res.dist0 <= target.rho0 + 1e-3 and res.dist1 <= target.rho1 + 1e-3
          and abs(res.gap) <= 1e-4 * max(1.0, res.primal_value))
    record(5, ok, f"dist0 {res.dist0:.6f} (rho0 {target.rho0:.6f}), dist1 {res.dist1:.6f} "
                  f"(rho1 {target.rho1:.6f}), gap {res.gap:.2e}, primal {res.primal_value:.4e}, "
                  f"{res.iterations} iterations", elapsed, 300)


def _socp_oracle(prob, target):
    """Constrained QP with explicit columns of A from the matrix-free operator."""
    import cvxpy as cp

    s = prob.solver
    g = s.grid
    active = np.flatnonzero(prob.mask1)
    vel = np.zeros((g.nx - 1, active.size))
    pos = np.zeros((g.nx - 1, active.size))
    for j, idx in enumerate(active):
        e = np.zeros(g.nt + 1)
        e[idx] = 1.0
        eta, zeta, _ = apply_A(prob, e, delta=0.0)
        vel[:, j], pos[:, j] = eta[1:-1], -zeta[1:-1]
    aff = s.terminal_of(solve_affine_part(prob)[0])
    lap = (2 * np.eye(g.nx - 1) - np.eye(g.nx - 1, k=1) - np.eye(g.nx - 1, k=-1)) / g.dy**2
    R = cholesky(lap, lower=True)
    Rv = solve_triangular(R, vel, lower=True)
    Rc = solve_triangular(R, (aff.velocity - target.v1_target)[1:-1], lower=True)
    w = cp.Variable(active.size)
    cons = [np.sqrt(g.dy) * cp.norm(pos @ w + (aff.position - target.v0_target)[1:-1]) <= target.rho0,
            np.sqrt(g.dy) * cp.norm(Rv @ w + Rc) <= target.rho1]
    problem = cp.Problem(cp.Minimize(0.5 * g.dt * cp.sum_squares(w)), cons)
    problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-8, tol_gap_rel=1e-8, tol_feas=1e-8)
    return problem.value


def test_criterion_6_dual_oracle():
    pytest.importorskip("cvxpy")
    start = time.perf_counter()
    s = sin_solver(8, 32)
    g = s.grid
    v2 = SpaceTimeField(0.1 * np.sin(2 * np.pi * g.y)[None, :] * np.cos(g.t)[:, None], g)
    prob = HierarchicProblem(s, Geometry("right", "additive"), v2, sigma=10.0)
    target = ControllabilityTarget(0.3 * np.sin(np.pi * g.y), np.zeros(g.nx + 1), 0.1, 0.1)
    res = minimize_dual(prob, target)
    oracle = _socp_oracle(prob, target)
    rel = abs(res.primal_value - oracle) / abs(oracle)
    record(6, rel <= 1e-4, f"primal {res.primal_value:.10e} vs SOCP oracle {oracle:.10e}, "
                           f"relative {rel:.2e} (<= 1e-4)", time.perf_counter() - start, 120)


def test_criterion_7_variational_inequality(benchmark):
    prob, target, res, _ = benchmark
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    g = prob.grid
    f = res.f_star
    scale = f.norm()
    at_star = check_variational_inequality(prob, f, target, [f], res.terminal)
    probes = [DualVariable(f.f0 + scale * rng.standard_normal(g.nx + 1),
                           f.f1 + scale * rng.standard_normal(g.nx + 1)) for _ in range(50)]
    worst = check_variational_inequality(prob, f, target, probes, res.terminal)
    ok = at_star == 0.0 and worst >= -1e-6 * scale
    record(7, ok, f"f-hat = f* gives {at_star!r}; min over 50 probes {worst:.3e} "
                  f"(>= {-1e-6 * scale:.2e})", time.perf_counter() - start, 30)


def test_criterion_8_gates(tmp_path):
    start = time.perf_counter()
    cfg = {"scale": {"family": "sinusoidal", "params": [0.1, 1.0, 1.0]},
           "grid": {"nx": 8, "nt": 32, "T": 1.5},
           "geometry": {"gamma0": "right", "mode": "additive"},
           "target": {"v0": {"kind": "sine", "amplitude": 0.3}}}
    code = run_config("leader", cfg, tmp_path)
    try:
        ScaleFunction.linear(1.0, 1.2, 1.0)
        rejected = False
    except HyperbolicityViolation:
        rejected = True
    record(8, code == 5 and rejected,
           f"leader exit code {code} for T = 1.5 (need 5); k = 1 + 1.2 t rejected: {rejected}",
           time.perf_counter() - start, 1)


def test_criterion_9_trivial_fixed_point():
    start = time.perf_counter()
    s = sin_solver(16, 64)
    g = s.grid
    prob = HierarchicProblem(s, Geometry("right", "additive"), sigma=10.0)
    target = ControllabilityTarget(0.05 * np.sin(np.pi * g.y), np.zeros(g.nx + 1), 0.1, 0.1)
    res = minimize_dual(prob, target)
    ok = (not np.any(res.f_star.f0) and not np.any(res.f_star.f1) and not np.any(res.w1.samples)
          and res.gap == 0.0 and res.iterations == 1)
    record(9, ok, f"f* = 0: {not np.any(res.f_star.as_vector())}, w1 = 0: "
                  f"{not np.any(res.w1.samples)}, gap {res.gap!r}, iterations {res.iterations}",
           time.perf_counter() - start, 5)
