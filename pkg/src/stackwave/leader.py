"""Leader control for approximate controllability of the terminal pair.

Notation (all discrete, exact transposes of the marching scheme):

* ``B1``, ``B2`` lift a trace on the leader / follower segment to a state.
* ``H = sigma I + B2* k^n B2`` is the follower Hessian.
* ``g = B1 w1 + B2 s`` with ``s = -H^{-1} B2* k^n B1 w1`` is the part of the
  state driven by the leader once the follower has reacted.
* ``A w1 = (g'(T) + delta g(T), -g(T))``.

The state splits as ``v = v0 + g`` where ``v0`` is the follower's answer to
a zero leader.  The leader minimises ``1/2 |w1|^2`` subject to terminal balls
around ``(v0_target, v1_target)``.  Its Fenchel dual over ``f = (f0, f1)``
(``f0`` in H^1_0, ``f1`` in L^2) is

    D(f) = 1/2 |A* f|^2 + (v0_target - v0(T), f1)
           - <v1_target - v0'(T), f0> + rho1 |f0|_{H^1_0} + rho0 |f1|_{L^2}

and the optimal leader is ``w1 = A* f_star``.  D is minimised with a
monotone FISTA on a dense copy of ``A`` (assembled column-by-column from
batched marches); everything reported back is recomputed matrix-free.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .discretization import (
    BoundaryControl,
    SpaceTimeField,
    TerminalPair,
    norm_h01_omega,
    norm_hm1_omega,
    norm_l2_omega,
    norm_l2_sigma,
    pair_l2_omega,
)
from .errors import GeometryGate, HolmgrenViolation, NoConvergence
from .fixed_point import krylov_fixed_point, solve_affine_fixed_point
from .follower import FollowerProblem, dirichlet_traces, solve_follower
from .scale import holmgren_time_ok

log = logging.getLogger(__name__)


# -- data types -----------------------------------------------------------------


@dataclass(frozen=True)
class ControllabilityTarget:
    """Terminal balls ``|v(T) - v0| <= rho0`` (L^2), ``|v'(T) - v1| <= rho1`` (H^-1)."""

    v0_target: np.ndarray
    v1_target: np.ndarray
    rho0: float
    rho1: float

    def __post_init__(self):
        v0 = np.asarray(self.v0_target, dtype=float)
        v1 = np.asarray(self.v1_target, dtype=float)
        if v0.shape != v1.shape or v0.ndim != 1:
            raise ValueError("targets must be nodal vectors of equal length")
        if not (self.rho0 > 0 and self.rho1 > 0):
            raise ValueError("ball radii must be positive")
        scale = max(1.0, float(np.max(np.abs(v0))))
        if abs(v0[0]) > 1e-12 * scale or abs(v0[-1]) > 1e-12 * scale:
            raise ValueError("v0_target must vanish at both ends")
        object.__setattr__(self, "v0_target", v0)
        object.__setattr__(self, "v1_target", v1)


@dataclass
class DualVariable:
    """``(f0, f1)`` as nodal vectors with zero end values."""

    f0: np.ndarray
    f1: np.ndarray

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=float).copy()
        self.f1 = np.asarray(self.f1, dtype=float).copy()
        self.f0[0] = self.f0[-1] = 0.0
        self.f1[0] = self.f1[-1] = 0.0

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros(grid.nx + 1), np.zeros(grid.nx + 1))

    @classmethod
    def from_vector(cls, x, grid):
        """Inverse of :meth:`as_vector`."""
        m = grid.nx - 1
        f0 = np.zeros(grid.nx + 1)
        f1 = np.zeros(grid.nx + 1)
        f0[1:-1] = x[:m]
        f1[1:-1] = x[m:]
        return cls(f0, f1)

    def as_vector(self):
        return np.concatenate([self.f0[1:-1], self.f1[1:-1]])

    def norm(self):
        """``sqrt(|f0|_{H^1_0}^2 + |f1|_{L^2}^2)``."""
        return float(np.hypot(norm_h01_omega(self.f0), norm_l2_omega(self.f1)))


@dataclass
class CascadeSolution:
    phi: SpaceTimeField
    psi: SpaceTimeField
    iterations: int
    residual: float
    s: np.ndarray = None


@dataclass
class LeaderOptions:
    """Tolerances of the leader solve.

    ``tol`` bounds the relative objective decrease at which FISTA may stop,
    together with ``|gap| <= gap_tol * max(primal, gap_floor)`` and terminal
    distances within ``feas_tol`` of the radii.  ``fp_tol`` is used by the
    inner coupled solves.
    """

    tol: float = 1e-8
    max_iter: int = 500
    relaxation: float = 0.5
    fp_tol: float = 1e-12
    fista_max_iter: int = 20000
    gap_tol: float = 1e-7
    gap_floor: float = 1e-14
    feas_tol: float = 1e-6
    restart: bool = True
    delta_max_outer: int = 50
    override_holmgren: bool = False
    override_mode: bool = False
    seed: int = 0


@dataclass
class LeaderResult:
    f_star: DualVariable
    w1: BoundaryControl
    w2: BoundaryControl
    terminal: TerminalPair
    dist0: float
    dist1: float
    primal_value: float
    dual_value: float
    gap: float
    iterations: int = 0
    converged: bool = True
    holmgren_ok: bool = True
    rho0: float = 0.0
    rho1: float = 0.0
    state: SpaceTimeField = None
    objective_history: list = field(default_factory=list)

    def summary(self):
        return {
            "primal": self.primal_value,
            "dual": self.dual_value,
            "gap": self.gap,
            "dist0": self.dist0,
            "dist1": self.dist1,
            "rho0": self.rho0,
            "rho1": self.rho1,
            "iterations": self.iterations,
            "holmgren_ok": self.holmgren_ok,
        }


# -- the hierarchic problem -------------------------------------------------------


class HierarchicProblem:
    """Solver, geometry and follower data shared by every leader operation.

    Parameters
    ----------
    solver : WaveSolver
    geom : Geometry
    v2 : SpaceTimeField, optional
        Follower tracking target (zero when omitted).
    sigma : float
        Follower control penalty.
    delta : float
        Weight of ``g(T)`` in the first component of ``A``.
    method : {"krylov", "picard"}
        Coupled follower-side solves: GMRES on the affine fixed point, or
        relaxed Picard sweeps that fall back to GMRES on stagnation.
    """

    def __init__(self, solver, geom, v2=None, sigma=1.0, delta=0.0, tol=1e-12,
                 relaxation=0.5, max_iter=500, method="krylov"):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        if delta < 0:
            raise ValueError("delta must be nonnegative")
        self.solver = solver
        self.geom = geom
        self.grid = solver.grid
        self.v2 = SpaceTimeField.zeros(self.grid) if v2 is None else v2
        self.sigma = float(sigma)
        self.delta = float(delta)
        self.tol = tol
        self.relaxation = relaxation
        self.max_iter = max_iter
        if method not in ("krylov", "picard"):
            raise ValueError("method must be 'krylov' or 'picard'")
        self.method = method
        self.seg1, self.seg2 = geom.segments(self.grid.T)
        self.mask1 = self.seg1.mask(self.grid.t)
        self.mask2 = self.seg2.mask(self.grid.t)
        self._affine = None
        self._dense = None

    def leader_control(self, samples):
        return BoundaryControl(self.seg1, np.asarray(samples, dtype=float) * self.mask1)

    def follower_problem(self, w1):
        w1 = w1 if isinstance(w1, BoundaryControl) else self.leader_control(w1)
        return FollowerProblem(self.solver, self.geom, w1, self.v2, self.sigma)

    # fixed point on the follower-side trace, in Sigma-normalised coordinates
    def _coupled_trace(self, fmap, what):
        sq = np.sqrt(self.grid.dt)

        def scaled(z):
            return sq * fmap(z / sq)

        x0 = np.zeros(self.grid.nt + 1)
        if self.method == "krylov":
            res = krylov_fixed_point(scaled, x0, self.tol, self.max_iter)
        else:
            res = solve_affine_fixed_point(scaled, x0, self.tol, self.relaxation, self.max_iter)
        if not res.converged:
            raise NoConvergence(
                f"{what}: coupled iteration stalled at {res.residual:.3e} "
                f"(contraction estimate {res.contraction_estimate:.3f}); "
                "retry with another method or a smaller relaxation", best=res.x / sq, history=res.history)
        return res.x / sq, res

    def _forward(self, w1, s):
        traces = dirichlet_traces(self.grid, (self.seg1, w1 * self.mask1),
                                  (self.seg2, s * self.mask2))
        return self.solver.march_forward(dirichlet=traces)

    def _follower_feedback(self, p):
        return -self.mask2 * self.solver.conormal_trace(p, self.seg2.side) / self.sigma


def solve_affine_part(problem):
    """Follower equilibrium for a zero leader: ``(v0, p0, s0)``.

    Cached on ``problem``; zero when ``v2`` vanishes.
    """
    if problem._affine is not None:
        return problem._affine
    s = problem.solver
    kn = s.kn[:, None]
    zero = np.zeros(problem.grid.nt + 1)

    def fmap(z):
        v = problem._forward(zero, z)
        p = s.march_backward(rhs=kn * (v.values - problem.v2.values))
        return problem._follower_feedback(p)

    s0, _ = problem._coupled_trace(fmap, "affine part")
    v0 = problem._forward(zero, s0)
    p0 = s.march_backward(rhs=kn * (v0.values - problem.v2.values))
    problem._affine = (v0, p0, s0)
    return problem._affine


def _terminal_image(solver, g, delta):
    pair = solver.terminal_of(g)
    return pair.velocity + delta * pair.position, -pair.position


def apply_A(problem, w1, delta=None):
    """``A w1 = (g'(T) + delta g(T), -g(T))`` with the follower reacting.

    Returns ``(eta, zeta, g)``: nodal vectors (zero ends) and the field g.
    """
    delta = problem.delta if delta is None else delta
    w1 = (w1.samples if isinstance(w1, BoundaryControl) else np.asarray(w1, float)) * problem.mask1
    s = problem.solver
    kn = s.kn[:, None]

    def fmap(z):
        q = s.march_backward(rhs=kn * problem._forward(w1, z).values)
        return problem._follower_feedback(q)

    sv, _ = problem._coupled_trace(fmap, "apply_A")
    g = problem._forward(w1, sv)
    eta, zeta = _terminal_image(s, g, delta)
    return eta, zeta, g


def solve_cascade(problem, f):
    """Backward ``phi`` from ``(f0, f1)`` coupled to the forward ``psi``.

    ``phi`` carries the load ``k^n psi`` and ``psi`` is driven on the
    follower segment by ``-(1/sigma)`` times the conormal trace of ``phi``.
    """
    s = problem.solver
    kn = s.kn[:, None]
    zero = np.zeros(problem.grid.nt + 1)
    terminal = (f.f0, f.f1)

    def phi_of(z):
        psi = problem._forward(zero, z)
        return s.march_backward(rhs=kn * psi.values, terminal=terminal, delta=problem.delta), psi

    def fmap(z):
        return problem._follower_feedback(phi_of(z)[0])

    sv, res = problem._coupled_trace(fmap, "adjoint cascade")
    phi, psi = phi_of(sv)
    return CascadeSolution(phi, psi, res.iterations, res.residual, sv)


def apply_A_star(problem, f, cascade=None):
    """Adjoint of :func:`apply_A` in the Sigma and terminal pairings.

    Discrete counterpart of ``-(1/k^2) phi_nu`` on the leader segment.
    """
    cascade = solve_cascade(problem, f) if cascade is None else cascade
    trace = problem.solver.conormal_trace(cascade.phi, problem.seg1.side)
    return problem.leader_control(trace)


def terminal_pairing(eta, zeta, f):
    """``<eta, f0> + (zeta, f1)`` with the H^-1 pairing taken as the L^2 one."""
    return pair_l2_omega(eta, f.f0) + pair_l2_omega(zeta, f.f1)


# -- dense operator ----------------------------------------------------------------


class DenseOperator:
    """Explicit matrix of ``A`` on the active leader samples.

    Columns come from batched unit-impulse marches; the follower coupling is
    assembled from the same impulses marched backward, so no quadrature is
    introduced beyond the scheme itself.  ``matrix`` maps the active samples
    to the stacked interior values of ``(eta, zeta)``.
    """

    def __init__(self, problem, chunk=64):
        g = problem.grid
        dt = g.dt
        self.problem = problem
        self.active1 = np.flatnonzero(problem.mask1)
        self.active2 = np.flatnonzero(problem.mask2)
        same = problem.seg1 == problem.seg2
        t1, c21 = self._impulses(problem.seg1, self.active1, problem.seg2, self.active2, chunk)
        if same:
            t2, c22 = t1, c21
        else:
            t2, c22 = self._impulses(problem.seg2, self.active2, problem.seg2, self.active2, chunk)
        m22 = dt * c22
        m22 = 0.5 * (m22 + m22.T)
        hess = problem.sigma * dt * np.eye(self.active2.size) + m22
        self.coupling = -cho_solve(cho_factor(hess), dt * c21)
        last = t1 + np.einsum("lia,ab->lib", t2, self.coupling)
        pos, vel = last[2], (3.0 * last[2] - 4.0 * last[1] + last[0]) / (2.0 * dt)
        self.pos = pos
        self.vel = vel
        self.set_delta(problem.delta)

    def _impulses(self, seg, active, target, target_active, chunk):
        """Terminal levels of B e_j and rows of ``target* k^n B e_j``."""
        s = self.problem.solver
        g = self.problem.grid
        kn = s.kn[:, None, None]
        n = active.size
        tail = np.zeros((3, g.nx - 1, n))
        cross = np.zeros((target_active.size, n))
        for lo in range(0, n, chunk):
            cols = active[lo:lo + chunk]
            eye = np.zeros((g.nt + 1, cols.size))
            eye[cols, np.arange(cols.size)] = 1.0
            zero = np.zeros_like(eye)
            pair = (eye, zero) if seg.side == "left" else (zero, eye)
            G = s.march_forward(dirichlet=pair)
            tail[:, :, lo:lo + cols.size] = G[-3:, 1:-1]
            P = s.march_backward(rhs=kn * G)
            cross[:, lo:lo + cols.size] = s.conormal_trace(P, target.side)[target_active]
        return tail, cross

    def set_delta(self, delta):
        self.delta = float(delta)
        self.matrix = np.vstack([self.vel + self.delta * self.pos, -self.pos])

    def apply(self, w1):
        """Matrix version of :func:`apply_A`; returns ``(eta, zeta)`` nodal vectors."""
        samples = w1.samples if isinstance(w1, BoundaryControl) else np.asarray(w1, float)
        y = self.matrix @ samples[self.active1]
        return _split(y, self.problem.grid)

    def apply_adjoint(self, x):
        """Matrix version of :func:`apply_A_star` acting on stacked interiors."""
        g = self.problem.grid
        out = np.zeros(g.nt + 1)
        out[self.active1] = (g.dy / g.dt) * (self.matrix.T @ x)
        return out

    def smallest_singular_value(self):
        return float(np.linalg.svd(self.matrix, compute_uv=False)[-1])


def _split(y, grid):
    m = grid.nx - 1
    eta = np.zeros(grid.nx + 1)
    zeta = np.zeros(grid.nx + 1)
    eta[1:-1] = y[:m]
    zeta[1:-1] = y[m:]
    return eta, zeta


def dense_operator(problem):
    if problem._dense is None:
        problem._dense = DenseOperator(problem)
    problem._dense.set_delta(problem.delta)
    return problem._dense


# -- dual functional -------------------------------------------------------------


def _centre(problem, target, g_terminal=None):
    """Centre ``c`` of the constraint set in the image space of ``A``.

    ``g_terminal`` is the frozen ``g(T)`` entering the first block when
    ``delta > 0``.
    """
    v0, _, _ = solve_affine_part(problem)
    aff = problem.solver.terminal_of(v0)
    c0 = target.v1_target - aff.velocity
    if problem.delta > 0 and g_terminal is not None:
        c0 = c0 + problem.delta * g_terminal
    c1 = -(target.v0_target - aff.position)
    c0 = c0.copy()
    c1 = c1.copy()
    c0[0] = c0[-1] = c1[0] = c1[-1] = 0.0
    return c0, c1


def dual_functional(problem, f, target, g_terminal=None, a_star=None):
    """Matrix-free value of the dual functional at ``f``."""
    w = apply_A_star(problem, f) if a_star is None else a_star
    c0, c1 = _centre(problem, target, g_terminal)
    quad = 0.5 * norm_l2_sigma(w.samples, problem.grid.dt) ** 2
    lin = -(pair_l2_omega(c0, f.f0) + pair_l2_omega(c1, f.f1))
    return quad + lin + target.rho1 * norm_h01_omega(f.f0) + target.rho0 * norm_l2_omega(f.f1)


class _DualModel:
    """Dense dual objective in stacked interior coordinates ``x = (f0, f1)``.

    Smooth part ``1/2 x'Qx + l'x``; the metric is
    ``M = dy * diag(-D^2, I)`` so that the block norms are the H^1_0 and L^2
    norms of f0 and f1.
    """

    def __init__(self, op, centre, target):
        g = op.problem.grid
        dy, dt = g.dy, g.dt
        m = g.nx - 1
        self.m = m
        A = op.matrix
        self.op = op
        self.Q = (dy**2 / dt) * (A @ A.T)
        self.lin = -dy * np.concatenate([centre[0][1:-1], centre[1][1:-1]])
        lap = (2.0 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)) / dy**2
        self.M0 = dy * lap
        self.M0_chol = cho_factor(self.M0)
        self.dy = dy
        self.rho = (target.rho1, target.rho0)

    def block_norms(self, x):
        x0, x1 = x[:self.m], x[self.m:]
        return (float(np.sqrt(max(0.0, x0 @ self.M0 @ x0))),
                float(np.sqrt(self.dy * (x1 @ x1))))

    def smooth(self, x):
        return 0.5 * x @ (self.Q @ x) + self.lin @ x

    def grad(self, x):
        return self.Q @ x + self.lin

    def metric_grad(self, gr):
        out = gr.copy()
        out[:self.m] = cho_solve(self.M0_chol, gr[:self.m])
        out[self.m:] = gr[self.m:] / self.dy
        return out

    def metric_sq(self, d):
        n0, n1 = self.block_norms(d)
        return n0**2 + n1**2

    def nonsmooth(self, x):
        n0, n1 = self.block_norms(x)
        return self.rho[0] * n0 + self.rho[1] * n1

    def value(self, x):
        return self.smooth(x) + self.nonsmooth(x)

    def prox(self, x, tau):
        out = x.copy()
        n = self.block_norms(x)
        for blk, (nb, rho) in enumerate(zip(n, self.rho)):
            sl = slice(0, self.m) if blk == 0 else slice(self.m, None)
            out[sl] = shrink(x[sl], nb, tau * rho)
        return out

    def primal(self, x):
        w = self.op.apply_adjoint(x)
        return 0.5 * self.op.problem.grid.dt * float(w @ w)

    def power_lipschitz(self, rng, iters=200):
        """Largest eigenvalue of ``M^-1 Q`` by power iteration."""
        z = rng.standard_normal(self.Q.shape[0])
        lam = 0.0
        for _ in range(iters):
            y = self.metric_grad(self.Q @ z)
            nrm = np.sqrt(self.metric_sq(y))
            if nrm == 0.0:
                return 0.0
            lam_new = np.sqrt(self.metric_sq(y)) / np.sqrt(self.metric_sq(z))
            z = y / nrm
            if abs(lam_new - lam) <= 1e-10 * lam_new:
                lam = lam_new
                break
            lam = lam_new
        return lam


def shrink(x, norm_x, threshold):
    """Block soft-thresholding: zero when ``|x| <= threshold``."""
    if norm_x <= threshold:
        return np.zeros_like(x)
    return x * (1.0 - threshold / norm_x)


def _distances(model, x, centre_stack):
    """Terminal distances predicted by the dense model at ``x``."""
    op = model.op
    w = op.apply_adjoint(x)
    r = op.matrix @ w[op.active1] - centre_stack
    m = model.m
    g = op.problem.grid
    e0 = np.zeros(g.nx + 1)
    e0[1:-1] = r[:m]
    e1 = np.zeros(g.nx + 1)
    e1[1:-1] = r[m:]
    return norm_l2_omega(e1), norm_hm1_omega(e0)


def _fista(model, target, opts, rng, x0=None):
    """Monotone FISTA with adaptive restart.  Returns ``(x, history, iters, ok)``."""
    n = model.Q.shape[0]
    x = np.zeros(n) if x0 is None else x0.copy()
    lip = model.power_lipschitz(rng)
    tau = 1.0 / (1.05 * lip) if lip > 0 else 1.0
    fx = model.value(x)
    history = [fx]
    y = x.copy()
    t = 1.0
    centre_stack = -model.lin / model.dy
    for it in range(1, opts.fista_max_iter + 1):
        gy = model.grad(y)
        hy = model.smooth(y)
        step = model.metric_grad(gy)
        while True:
            z = model.prox(y - tau * step, tau)
            d = z - y
            if model.smooth(z) <= hy + gy @ d + model.metric_sq(d) / (2.0 * tau) + 1e-14 * abs(hy):
                break
            tau *= 0.5
        fz = model.value(z)
        x_prev = x
        if fz <= fx:
            x, f_new = z, fz
        else:
            f_new = fx
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if opts.restart and fz > fx:
            y, t = x.copy(), 1.0
        else:
            y = x + (t / t_new) * (z - x) + ((t - 1.0) / t_new) * (x - x_prev)
            t = t_new
        decrease = (fx - f_new) / max(1.0, abs(f_new))
        fx = f_new
        history.append(fx)
        if decrease <= opts.tol:
            primal = model.primal(x)
            gap = primal + fx
            d0, d1 = _distances(model, x, centre_stack)
            if (abs(gap) <= opts.gap_tol * max(primal, opts.gap_floor)
                    and d0 <= target.rho0 + opts.feas_tol and d1 <= target.rho1 + opts.feas_tol):
                return x, history, it, True
    return x, history, opts.fista_max_iter, False


def check_gates(problem, opts):
    """Holmgren time condition and shared-segment requirement.

    Returns the Holmgren flag; raises unless the matching override is set.
    """
    ok = holmgren_time_ok(problem.grid.T, problem.geom)
    if not ok:
        msg = (f"T = {problem.grid.T:g} does not exceed 2 d = {2 * problem.geom.distance:g}; "
               "density of the reachable set is not guaranteed")
        if not opts.override_holmgren:
            raise HolmgrenViolation(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    if problem.geom.mode != "additive":
        msg = "leader solve assumes both controls act additively on one segment"
        if not opts.override_mode:
            raise GeometryGate(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return ok


def minimize_dual(problem, target, opts=None):
    """Minimise the dual functional and rebuild the leader, follower and state.

    Raises
    ------
    HolmgrenViolation, GeometryGate
        When a gate fails and is not overridden.
    NoConvergence
        With the best :class:`LeaderResult` attached as ``best``.
    """
    opts = LeaderOptions() if opts is None else opts
    holmgren_ok = check_gates(problem, opts)
    rng = np.random.default_rng(opts.seed)
    op = dense_operator(problem)
    g = problem.grid

    g_terminal = np.zeros(g.nx + 1)
    x = None
    total = 0
    history = []
    outer_ok = problem.delta == 0.0
    for _outer in range(opts.delta_max_outer if problem.delta > 0 else 1):
        centre = _centre(problem, target, g_terminal)
        model = _DualModel(op, centre, target)
        x, hist, iters, ok = _fista(model, target, opts, rng, x)
        total += iters
        history += hist
        if problem.delta == 0.0:
            break
        w = op.apply_adjoint(x)
        _, zeta = op.apply(w)
        new_gT = -zeta
        change = np.max(np.abs(new_gT - g_terminal))
        g_terminal = new_gT
        if change <= opts.tol * max(1.0, np.max(np.abs(new_gT))):
            outer_ok = True
            break
    f_star = DualVariable.from_vector(x, g)
    result = _rebuild(problem, target, f_star, g_terminal, opts)
    result.iterations = total
    result.holmgren_ok = holmgren_ok
    result.objective_history = history
    result.converged = bool(ok and outer_ok)
    if not result.converged:
        raise NoConvergence(
            f"dual minimisation stopped after {total} iterations with gap {result.gap:.3e}, "
            f"dist0 {result.dist0:.3e} (rho0 {target.rho0:.3e}), "
            f"dist1 {result.dist1:.3e} (rho1 {target.rho1:.3e})",
            best=result, history=history)
    return result


def _rebuild(problem, target, f_star, g_terminal, opts):
    """Matrix-free leader, follower response, state and reported quantities."""
    g = problem.grid
    w1 = apply_A_star(problem, f_star)
    fol = solve_follower(problem.follower_problem(w1), tol=min(1e-10, opts.fp_tol * 100),
                         max_iter=max(opts.max_iter, 1000))
    term = problem.solver.terminal_of(fol.v)
    dist0 = norm_l2_omega(term.position - target.v0_target)
    dist1 = norm_hm1_omega(term.velocity - target.v1_target)
    primal = 0.5 * norm_l2_sigma(w1.samples, g.dt) ** 2
    dual = dual_functional(problem, f_star, target, g_terminal, a_star=w1)
    return LeaderResult(f_star, w1, fol.w2, term, dist0, dist1, primal, dual, primal + dual,
                        rho0=target.rho0, rho1=target.rho1, state=fol.v)


# -- optimality conditions ----------------------------------------------------------


def check_variational_inequality(problem, f_star, target, directions, terminal=None):
    """Most negative value of the variational inequality over ``directions``.

    ``terminal`` is the terminal pair of the state driven by ``A* f_star``;
    it is recomputed when omitted.
    """
    if terminal is None:
        w1 = apply_A_star(problem, f_star)
        fol = solve_follower(problem.follower_problem(w1))
        terminal = problem.solver.terminal_of(fol.v)
    e_vel = terminal.velocity - target.v1_target
    e_pos = terminal.position - target.v0_target
    n0 = norm_h01_omega(f_star.f0)
    n1 = norm_l2_omega(f_star.f1)
    worst = np.inf
    for fh in directions:
        val = (pair_l2_omega(e_vel, fh.f0 - f_star.f0)
               - pair_l2_omega(e_pos, fh.f1 - f_star.f1)
               + target.rho1 * (norm_h01_omega(fh.f0) - n0)
               + target.rho0 * (norm_l2_omega(fh.f1) - n1))
        worst = min(worst, val)
    return float(worst)


def assemble_leader_optimality_system(problem, f_star):
    """Fields ``(phi, psi, v, p)`` for ``f_star`` and the residual of every relation.

    Returns ``(fields, report)`` where ``report`` maps each equation or
    boundary/terminal condition to its max-norm residual.
    """
    s = problem.solver
    kn = s.kn[:, None]
    cas = solve_cascade(problem, f_star)
    w1 = apply_A_star(problem, f_star, cascade=cas)
    fol = solve_follower(problem.follower_problem(w1))
    v, p = fol.v, fol.p
    phi, psi = cas.phi, cas.psi

    def trace(field, side):
        return field.trace(side)

    w2 = problem._follower_feedback(p)
    expected_v = dirichlet_traces(problem.grid, (problem.seg1, w1.samples), (problem.seg2, w2))
    expected_psi = dirichlet_traces(problem.grid, (problem.seg2, problem._follower_feedback(phi)))
    report = {
        "phi_equation": float(np.max(np.abs(s.residual_backward(
            phi, rhs=kn * psi.values, terminal=(f_star.f0, f_star.f1), delta=problem.delta)))),
        "psi_equation": float(np.max(np.abs(s.residual_forward(psi)))),
        "v_equation": float(np.max(np.abs(s.residual_forward(v)))),
        "p_equation": float(np.max(np.abs(s.residual_backward(
            p, rhs=kn * (v.values - problem.v2.values))))),
        "psi_boundary": float(max(np.max(np.abs(trace(psi, "left") - expected_psi[0])),
                                  np.max(np.abs(trace(psi, "right") - expected_psi[1])))),
        "v_boundary": float(max(np.max(np.abs(trace(v, "left") - expected_v[0])),
                                np.max(np.abs(trace(v, "right") - expected_v[1])))),
        "phi_boundary": float(np.max(np.abs(phi.values[:, [0, -1]]))),
        "p_boundary": float(np.max(np.abs(p.values[:, [0, -1]]))),
        "p_terminal": float(np.max(np.abs(p.values[-1]))),
        "v_initial": float(np.max(np.abs(v.values[0, 1:-1]))),
        "cascade_fixed_point": float(cas.residual),
    }
    return (phi, psi, v, p), report
