import numpy as np
import pytest

from stackwave.discretization import BoundaryControl, SpaceTimeField
from stackwave.errors import NoConvergence
from stackwave.follower import (
    FollowerProblem,
    follower_update,
    j2_gradient,
    j2_value,
    solve_follower,
    solve_optimality_system,
    state,
    tracking_weights,
)
from stackwave.scale import Geometry


def make_problem(solver, rng, sigma=1.0, geom=None, w1=None, v2=None):
    g = solver.grid
    geom = geom or Geometry("right", "additive")
    seg1 = geom.segments(g.T)[0]
    if w1 is None:
        w1 = rng.standard_normal(g.nt + 1)
    if v2 is None:
        v2 = rng.standard_normal((g.nt + 1, g.nx + 1))
    w1c = BoundaryControl.on(seg1, np.asarray(w1, dtype=float), g)
    return FollowerProblem(solver, geom, w1c, SpaceTimeField(np.asarray(v2, dtype=float), g), sigma)


def dense_oracle(problem):
    """Direct factorisation of the follower normal equations."""
    s = problem.solver
    g = s.grid
    seg2 = problem.segments[1]
    G, active = s.boundary_matrix(seg2)
    W = tracking_weights(s)
    base = state(problem, np.zeros(g.nt + 1)).values[:, 1:-1] - problem.v2.values[:, 1:-1]
    Gf = G.reshape(-1, active.size)
    Wf = np.repeat(W, g.nx - 1)
    H = problem.sigma * g.dt * np.eye(active.size) + Gf.T @ (Wf[:, None] * Gf)
    rhs = -Gf.T @ (Wf * base.ravel())
    out = np.zeros(g.nt + 1)
    out[active] = np.linalg.solve(H, rhs)
    J = 0.5 * float(np.sum(Wf * (base.ravel() + Gf @ out[active]) ** 2))
    return out, J + 0.5 * problem.sigma * g.dt * float(out @ out)


def test_problem_validation(small_solver, rng):
    with pytest.raises(ValueError):
        make_problem(small_solver, rng, sigma=0.0)
    g = small_solver.grid
    with pytest.raises(ValueError):
        make_problem(small_solver, rng, v2=np.zeros((g.nt, g.nx + 1)))


def test_j2_trivial_values(small_solver, rng):
    g = small_solver.grid
    zero = make_problem(small_solver, rng, w1=np.zeros(g.nt + 1), v2=np.zeros((g.nt + 1, g.nx + 1)))
    assert j2_value(zero, np.zeros(g.nt + 1)) == 0.0
    assert np.all(j2_gradient(zero, np.zeros(g.nt + 1)).samples == 0)
    v2 = rng.standard_normal((g.nt + 1, g.nx + 1))
    pure = make_problem(small_solver, rng, w1=np.zeros(g.nt + 1), v2=v2)
    want = 0.5 * float(np.sum(tracking_weights(small_solver)[:, None] * v2[:, 1:-1] ** 2))
    assert j2_value(pure, np.zeros(g.nt + 1)) == pytest.approx(want, rel=1e-14)


def test_j2_matches_dense_quadratic(small_solver, rng):
    p = make_problem(small_solver, rng, sigma=0.7)
    g = small_solver.grid
    G, active = small_solver.boundary_matrix(p.segments[1])
    w2 = rng.standard_normal(g.nt + 1)
    v = state(p, np.zeros(g.nt + 1)).values[:, 1:-1] + np.einsum("mjk,k->mj", G, w2[active])
    d = v - p.v2.values[:, 1:-1]
    want = 0.5 * float(np.sum(tracking_weights(small_solver)[:, None] * d**2))
    want += 0.5 * 0.7 * g.dt * float(w2 @ w2)
    assert j2_value(p, w2) == pytest.approx(want, rel=1e-12)


def test_gradient_central_differences(small_solver, rng):
    p = make_problem(small_solver, rng, sigma=0.5)
    g = small_solver.grid
    h = 1e-5
    for _ in range(3):
        w2 = rng.standard_normal(g.nt + 1)
        z = rng.standard_normal(g.nt + 1)
        fd = (j2_value(p, w2 + h * z) - j2_value(p, w2 - h * z)) / (2 * h)
        an = g.dt * float(j2_gradient(p, w2).samples @ z)
        assert abs(fd - an) <= 1e-6 * abs(an)


@pytest.mark.parametrize("sigma", [0.1, 1.0, 10.0])
def test_cg_matches_dense_oracle(small_solver, rng, sigma):
    p = make_problem(small_solver, rng, sigma=sigma)
    sol = solve_follower(p)
    want, jwant = dense_oracle(p)
    assert np.max(np.abs(sol.w2.samples - want)) <= 1e-8 * max(1.0, np.max(np.abs(want)))
    assert sol.j2 == pytest.approx(jwant, rel=1e-10)
    assert sol.euler_residual <= 1e-10 * max(1.0, sol.w2.norm(p.grid))


def test_euler_equation_holds_at_solution(small_solver, rng):
    p = make_problem(small_solver, rng, sigma=2.0)
    sol = solve_follower(p)
    seg2 = p.segments[1]
    lhs = p.sigma * sol.w2.samples
    rhs = -small_solver.conormal_trace(sol.p, seg2.side) * p.mask2
    assert np.max(np.abs(lhs - rhs)) * np.sqrt(p.grid.dt) <= 1e-9


def test_zero_data_gives_zero_follower(small_solver, rng):
    g = small_solver.grid
    p = make_problem(small_solver, rng, w1=np.zeros(g.nt + 1), v2=np.zeros((g.nt + 1, g.nx + 1)))
    sol = solve_follower(p)
    assert np.all(sol.w2.samples == 0) and np.all(sol.v.values == 0) and np.all(sol.p.values == 0)
    assert sol.iterations == 0
    v, q, w2 = solve_optimality_system(p)
    assert np.all(w2.samples == 0) and np.all(v.values == 0)


def test_nash_property(small_solver, rng):
    p = make_problem(small_solver, rng, sigma=1.0)
    sol = solve_follower(p)
    j = j2_value(p, sol.w2)
    for _ in range(20):
        z = rng.standard_normal(p.grid.nt + 1)
        for eps in (1e-2, 1e-3):
            assert j2_value(p, sol.w2.samples + eps * z) >= j - 1e-12


def test_uniqueness_from_different_starts(small_solver, rng):
    p = make_problem(small_solver, rng, sigma=0.3)
    a = solve_follower(p).w2.samples
    b = solve_follower(p, w2_init=50 * rng.standard_normal(p.grid.nt + 1)).w2.samples
    assert np.max(np.abs(a - b)) <= 1e-8


def test_follower_affine_in_leader(small_solver, rng):
    g = small_solver.grid
    v2 = rng.standard_normal((g.nt + 1, g.nx + 1))
    wa, wb = rng.standard_normal((2, g.nt + 1))
    fa = solve_follower(make_problem(small_solver, rng, w1=wa, v2=v2), tol=1e-13).w2.samples
    fb = solve_follower(make_problem(small_solver, rng, w1=wb, v2=v2), tol=1e-13).w2.samples
    fm = solve_follower(make_problem(small_solver, rng, w1=0.3 * wa + 0.7 * wb, v2=v2),
                        tol=1e-13).w2.samples
    np.testing.assert_allclose(fm, 0.3 * fa + 0.7 * fb, atol=1e-10)


def test_follower_scales_with_leader(small_solver, rng):
    g = small_solver.grid
    zero = np.zeros((g.nt + 1, g.nx + 1))
    w = rng.standard_normal(g.nt + 1)
    f1 = solve_follower(make_problem(small_solver, rng, w1=w, v2=zero), tol=1e-13).w2.samples
    f3 = solve_follower(make_problem(small_solver, rng, w1=-2.5 * w, v2=zero), tol=1e-13).w2.samples
    np.testing.assert_allclose(f3, -2.5 * f1, atol=1e-10)


def test_disjoint_geometry(small_solver, rng):
    p = make_problem(small_solver, rng, sigma=1.0, geom=Geometry("both", "disjoint"))
    sol = solve_follower(p)
    want, _ = dense_oracle(p)
    np.testing.assert_allclose(sol.w2.samples, want, atol=1e-8)
    # leader trace sits on the left, follower on the right
    assert np.array_equal(sol.v.trace("left"), p.w1.samples)
    np.testing.assert_array_equal(sol.v.trace("right"), sol.w2.samples)


def test_disjoint_time_split(small_solver, rng):
    p = make_problem(small_solver, rng, geom=Geometry("right", "disjoint", split=0.5))
    sol = solve_follower(p)
    assert np.all(sol.w2.samples[p.mask2 == 0] == 0)
    np.testing.assert_allclose(sol.w2.samples, dense_oracle(p)[0], atol=1e-8)


def test_optimality_system_matches_cg(small_solver, rng):
    p = make_problem(small_solver, rng, sigma=10.0)
    sol = solve_follower(p, tol=1e-12)
    v, q, w2 = solve_optimality_system(p, tol=1e-11)
    assert np.max(np.abs(w2.samples - sol.w2.samples)) <= 1e-6
    assert np.max(np.abs(v.values - sol.v.values)) <= 1e-6


def test_optimality_system_contracts_above_threshold(small_solver, rng):
    """Residual decay of the undamped sweep improves monotonically with sigma."""
    g = small_solver.grid
    p0 = make_problem(small_solver, rng, sigma=1.0)

    def ratio(sigma):
        p = FollowerProblem(small_solver, p0.geom, p0.w1, p0.v2, sigma)
        x = np.zeros(g.nt + 1)
        diffs = []
        for _ in range(8):
            nx = follower_update(p, x)
            diffs.append(np.linalg.norm(nx - x))
            x = nx
        return diffs[-1] / diffs[-2]

    lo, hi = 1e-3, 1e3
    assert ratio(hi) < 1 < ratio(lo)
    for _ in range(30):
        mid = np.sqrt(lo * hi)
        lo, hi = (mid, hi) if ratio(mid) >= 1 else (lo, mid)
    sigma_star = hi
    assert 0 < sigma_star < 10.0
    for sigma in (1.5 * sigma_star, 5 * sigma_star):
        p = FollowerProblem(small_solver, p0.geom, p0.w1, p0.v2, sigma)
        x, prev = np.zeros(g.nt + 1), np.inf
        for _ in range(10):
            nx = follower_update(p, x)
            d = np.linalg.norm(nx - x)
            assert d < prev
            prev, x = d, nx


def test_no_convergence_carries_best(small_solver, rng):
    p = make_problem(small_solver, rng, sigma=0.01)
    with pytest.raises(NoConvergence) as info:
        solve_follower(p, tol=1e-14, max_iter=2)
    assert info.value.best is not None and len(info.value.history) == 3
    with pytest.raises(NoConvergence):
        solve_optimality_system(p, relaxation=1.0, max_iter=20)
