"""Finite differences on the unit cylinder and the exact discrete adjoint.

Scheme, at every interior node and time level m >= 1::

    (v^{m+1} - 2 v^m + v^{m-1}) / dt^2
        + b^m (D v^{m+1} - D v^{m-1}) / (2 dt)
        + K^m v^m + c^m D v^m = f^m

``K^m v = -(a v_y)_y`` uses the conservative three-point stencil with ``a``
sampled at half nodes, ``D`` is the centred first difference.  Only the
mixed ``b`` term is implicit, so each step is one tridiagonal solve (which is
diagonal when ``k`` is constant).  The first level comes from the Taylor
start ``v^1 = v^0 + dt v_1 + dt^2/2 (f^0 - L_h v^0)``.

Space-time inner products use trapezoid weights in time and the interior
nodes in space; boundary traces use ``dt * sum``.  With these weights
:meth:`WaveSolver.march_backward` is the exact transpose of
:meth:`WaveSolver.march_forward` and :meth:`WaveSolver.conormal_trace` is the
exact transpose of :meth:`WaveSolver.boundary_to_state`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .errors import CflViolation, NonhomogeneousBoundary, SingularStep
from .scale import Segment, eval_coefficients

CFL_LIMIT = 0.9


@dataclass(frozen=True)
class Grid:
    """Uniform grid on (0, 1) x (0, T)."""

    nx: int
    nt: int
    T: float

    def __post_init__(self):
        if self.nx < 8 or self.nt < 16:
            raise ValueError(f"grid too coarse: nx={self.nx} (>= 8), nt={self.nt} (>= 16)")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def dy(self):
        return 1.0 / self.nx

    @property
    def dt(self):
        return self.T / self.nt

    @property
    def y(self):
        return np.linspace(0.0, 1.0, self.nx + 1)

    @property
    def t(self):
        return np.linspace(0.0, self.T, self.nt + 1)

    @property
    def time_weights(self):
        """Trapezoid weights divided by dt."""
        w = np.ones(self.nt + 1)
        w[0] = w[-1] = 0.5
        return w

    @classmethod
    def from_cfl(cls, nx, T, cfl, k):
        """Smallest ``nt`` with ``dt * max sqrt(a) / dy <= cfl``."""
        y = np.linspace(0.0, 1.0, nx + 1)
        t = np.linspace(0.0, T, max(400, 40 * nx) + 1)
        a = eval_coefficients(k, y[None, :], t[:, None]).a
        speed = float(np.sqrt(a.max()))
        nt = int(np.ceil(T * speed * nx / cfl - 1e-9))
        return cls(nx, max(nt, 16), T)


@dataclass
class SpaceTimeField:
    """Values on the ``(nt + 1) x (nx + 1)`` grid, row m = time level."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shape = (self.grid.nt + 1, self.grid.nx + 1)
        if self.values.shape != shape:
            raise ValueError(f"field shape {self.values.shape} != {shape}")

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros((grid.nt + 1, grid.nx + 1)), grid)

    @classmethod
    def from_function(cls, grid, fn):
        return cls(fn(grid.y[None, :], grid.t[:, None]) + np.zeros((grid.nt + 1, grid.nx + 1)), grid)

    @property
    def interior(self):
        return self.values[:, 1:-1]

    def trace(self, side):
        return self.values[:, 0 if side == "left" else -1].copy()

    def __add__(self, other):
        return SpaceTimeField(self.values + other.values, self.grid)

    def __sub__(self, other):
        return SpaceTimeField(self.values - other.values, self.grid)

    def __mul__(self, alpha):
        return SpaceTimeField(alpha * self.values, self.grid)

    __rmul__ = __mul__


@dataclass
class BoundaryControl:
    """Dirichlet samples on a boundary segment, zero outside its window."""

    segment: Segment
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).copy()
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("control samples must be finite")

    @classmethod
    def on(cls, segment, samples, grid):
        """Restrict ``samples`` to the active window of ``segment``."""
        samples = np.asarray(samples, dtype=float)
        if samples.shape != (grid.nt + 1,):
            raise ValueError(f"expected {grid.nt + 1} samples, got {samples.shape}")
        return cls(segment, samples * segment.mask(grid.t))

    @classmethod
    def zeros(cls, segment, grid):
        return cls(segment, np.zeros(grid.nt + 1))

    @property
    def side(self):
        return self.segment.side

    def norm(self, grid):
        return norm_l2_sigma(self.samples, grid.dt)


@dataclass
class TerminalPair:
    """Interior representatives of ``(v(T), v'(T))`` (end values set to 0)."""

    position: np.ndarray
    velocity: np.ndarray


# -- norms and Riesz maps on (0, 1) -------------------------------------------


def _dy(vec):
    return 1.0 / (len(vec) - 1)


def _laplace_bands(n, dy):
    ab = np.empty((3, n))
    ab[0] = -1.0 / dy**2
    ab[1] = 2.0 / dy**2
    ab[2] = -1.0 / dy**2
    return ab


def _inverse_laplacian(vec):
    """Solve ``-D^2 z = vec`` on interior nodes, ``z = 0`` at both ends."""
    vec = np.asarray(vec, dtype=float)
    dy = _dy(vec)
    z = np.zeros_like(vec)
    z[1:-1] = solve_banded((1, 1), _laplace_bands(len(vec) - 2, dy), vec[1:-1])
    return z


def norm_l2_omega(vec):
    vec = np.asarray(vec, dtype=float)
    return float(np.sqrt(_dy(vec) * np.sum(vec[1:-1] ** 2)))


def norm_h01_omega(vec):
    vec = np.asarray(vec, dtype=float)
    scale = max(1.0, float(np.max(np.abs(vec))))
    if abs(vec[0]) > 1e-12 * scale or abs(vec[-1]) > 1e-12 * scale:
        raise NonhomogeneousBoundary("H^1_0 norm needs zero end values")
    dy = _dy(vec)
    return float(np.sqrt(dy * np.sum((np.diff(vec) / dy) ** 2)))


def norm_hm1_omega(vec):
    vec = np.asarray(vec, dtype=float)
    z = _inverse_laplacian(vec)
    return float(np.sqrt(max(0.0, _dy(vec) * np.dot(vec[1:-1], z[1:-1]))))


def norm_l2_sigma(trace, dt):
    trace = np.asarray(trace, dtype=float)
    return float(np.sqrt(dt * np.sum(trace**2)))


def pair_l2_omega(u, v):
    u = np.asarray(u, dtype=float)
    return float(_dy(u) * np.dot(u[1:-1], np.asarray(v, dtype=float)[1:-1]))


def riesz_h01(functional_repr):
    """H^1_0 representer of the functional ``g -> (functional_repr, g)_{L^2}``."""
    return _inverse_laplacian(functional_repr)


# -- the wave solver ------------------------------------------------------------


def _as_batch(x, shape):
    """Append a trailing batch axis when missing."""
    x = np.asarray(x, dtype=float)
    if x.shape == shape:
        return x[..., None], False
    if x.shape[:-1] == shape:
        return x, True
    raise ValueError(f"array of shape {x.shape} does not match {shape}")


class WaveSolver:
    """Marching solver for ``v'' + L v = f`` on a fixed grid.

    Coefficients are sampled once: ``a`` at half nodes, ``b`` and ``c`` at
    nodes, for every time level.
    """

    def __init__(self, k, grid, n=1, cfl_limit=CFL_LIMIT):
        self.k = k
        self.grid = grid
        self.n = n
        y, t = grid.y, grid.t
        yh = 0.5 * (y[1:] + y[:-1])
        self.a_half = eval_coefficients(k, yh[None, :], t[:, None], n).a
        coeffs = eval_coefficients(k, y[None, :], t[:, None], n)
        self.a_node = coeffs.a
        self.b = coeffs.b
        self.c = coeffs.c
        self.kn = k.value(t) ** n
        self.cfl = grid.dt * float(np.sqrt(max(self.a_half.max(), self.a_node.max()))) / grid.dy
        if self.cfl > cfl_limit:
            raise CflViolation(
                f"dt*max(sqrt(a))/dy = {self.cfl:.4f} exceeds {cfl_limit}"
            )
        self._implicit = [bool(np.any(self.b[m] != 0.0)) for m in range(grid.nt + 1)]

    # -- stencils: full (nx+1, B) -> interior (nx-1, B) --------------------

    def _stiff(self, m, v):
        a = self.a_half[m][:, None]
        flux = a * np.diff(v, axis=0)
        return -(flux[1:] - flux[:-1]) / self.grid.dy**2

    def _grad(self, v):
        return (v[2:] - v[:-2]) / (2.0 * self.grid.dy)

    def _lower(self, m, v):
        """K^m v + c^m D v on interior nodes."""
        return self._stiff(m, v) + self.c[m, 1:-1, None] * self._grad(v)

    # -- transposed stencils: interior (nx-1, B) -> full (nx+1, B) ---------

    def _stiff_T(self, m, lam):
        a = self.a_half[m][:, None]
        dy2 = self.grid.dy**2
        out = np.zeros((lam.shape[0] + 2,) + lam.shape[1:])
        out[1:-1] += (a[:-1] + a[1:]) * lam / dy2
        out[:-2] -= a[:-1] * lam / dy2
        out[2:] -= a[1:] * lam / dy2
        return out

    def _grad_T(self, w):
        out = np.zeros((w.shape[0] + 2,) + w.shape[1:])
        h = 2.0 * self.grid.dy
        out[2:] += w / h
        out[:-2] -= w / h
        return out

    def _lower_T(self, m, lam):
        return self._stiff_T(m, lam) + self._grad_T(self.c[m, 1:-1, None] * lam)

    # -- per-step tridiagonal systems ---------------------------------------

    def _bands(self, m, transpose=False):
        g = self.grid
        n = g.nx - 1
        bi = self.b[m, 1:-1] / (4.0 * g.dt * g.dy)
        ab = np.zeros((3, n))
        ab[1] = 1.0 / g.dt**2
        if transpose:
            ab[0, 1:] = -bi[1:]
            ab[2, :-1] = bi[:-1]
        else:
            ab[0, 1:] = bi[:-1]
            ab[2, :-1] = -bi[1:]
        return ab

    def _solve_step(self, m, rhs, transpose=False):
        if not self._implicit[m]:
            return rhs * self.grid.dt**2
        try:
            out = solve_banded((1, 1), self._bands(m, transpose), rhs)
        except (LinAlgError, ValueError) as exc:
            raise SingularStep(f"tridiagonal step {m} is singular") from exc
        if not np.all(np.isfinite(out)):
            raise SingularStep(f"tridiagonal step {m} produced non-finite values")
        return out

    # -- forward ------------------------------------------------------------

    def march_forward(self, dirichlet=None, source=None, init=None):
        """Solve ``v'' + L v = source`` with Dirichlet traces and initial data.

        Parameters
        ----------
        dirichlet : (left, right), optional
            Trace samples of length ``nt + 1`` (or ``(nt + 1, B)`` for a batch).
        source : SpaceTimeField or array, optional
        init : (v0, v1), optional
            Nodal initial position and velocity.

        Returns a :class:`SpaceTimeField`, or a raw ``(nt+1, nx+1, B)`` array
        when batched inputs were given.
        """
        g = self.grid
        N, nx, dt = g.nt, g.nx, g.dt
        batched = False
        width = 1
        parts = []
        if dirichlet is not None:
            left, bl = _as_batch(dirichlet[0], (N + 1,))
            right, br = _as_batch(dirichlet[1], (N + 1,))
            batched |= bl or br
            parts += [left, right]
        if source is not None:
            src = source.values if isinstance(source, SpaceTimeField) else source
            src, bs = _as_batch(src, (N + 1, nx + 1))
            batched |= bs
            parts.append(src)
        if init is not None:
            v0, b0 = _as_batch(init[0], (nx + 1,))
            v1, b1 = _as_batch(init[1], (nx + 1,))
            batched |= b0 or b1
            parts += [v0, v1]
        for p in parts:
            width = max(width, p.shape[-1])
        zt = np.zeros((N + 1, width))
        left, right = (zt, zt) if dirichlet is None else (left, right)
        src = np.zeros((N + 1, nx + 1, width)) if source is None else src
        if init is None:
            v0 = v1 = np.zeros((nx + 1, width))

        V = np.zeros((N + 1, nx + 1, width))
        V[0] = v0
        V[0, 0], V[0, -1] = left[0], right[0]
        lh = self._lower(0, V[0]) + self.b[0, 1:-1, None] * self._grad(v1)
        V[1, 1:-1] = V[0, 1:-1] + dt * v1[1:-1] + 0.5 * dt**2 * (src[0, 1:-1] - lh)
        V[1, 0], V[1, -1] = left[1], right[1]
        cb = 1.0 / (4.0 * dt * g.dy)
        for m in range(1, N):
            bm = self.b[m, 1:-1, None]
            rhs = (
                src[m, 1:-1]
                + (2.0 * V[m, 1:-1] - V[m - 1, 1:-1]) / dt**2
                - self._lower(m, V[m])
                + bm * self._grad(V[m - 1]) / (2.0 * dt)
            )
            # boundary columns of the implicit b-term
            rhs[0] += bm[0] * left[m + 1] * cb
            rhs[-1] -= bm[-1] * right[m + 1] * cb
            V[m + 1, 1:-1] = self._solve_step(m, rhs)
            V[m + 1, 0], V[m + 1, -1] = left[m + 1], right[m + 1]
        if batched:
            return V
        return SpaceTimeField(V[..., 0], g)

    def boundary_to_state(self, side, trace):
        """State driven by a Dirichlet trace on one end (zero data otherwise)."""
        trace = np.asarray(trace, dtype=float)
        zero = np.zeros_like(trace)
        pair = (trace, zero) if side == "left" else (zero, trace)
        return self.march_forward(dirichlet=pair)

    def boundary_matrix(self, segment):
        """Interior states of unit impulses on the active samples of ``segment``.

        Returns ``(G, active)`` with ``G`` of shape ``(nt+1, nx-1, n_active)``.
        """
        active = np.flatnonzero(segment.mask(self.grid.t))
        eye = np.zeros((self.grid.nt + 1, active.size))
        eye[active, np.arange(active.size)] = 1.0
        zero = np.zeros_like(eye)
        pair = (eye, zero) if segment.side == "left" else (zero, eye)
        return self.march_forward(dirichlet=pair)[:, 1:-1, :], active

    # -- transpose ------------------------------------------------------------

    def terminal_rhs(self, f0, f1, delta=0.0):
        """Space-time load whose pairing with ``g`` reproduces the terminal pairing.

        ``dt*dy*sum_m g^m . tau^m`` equals
        ``(g'(T) + delta g(T), f0) - (g(T), f1)`` with ``g'(T)`` from
        :meth:`terminal_of`.
        """
        g = self.grid
        dt = g.dt
        f0 = np.asarray(f0, dtype=float)[1:-1]
        f1 = np.asarray(f1, dtype=float)[1:-1]
        tau = np.zeros((g.nt + 1, g.nx - 1) + f0.shape[1:])
        tau[-1] = ((1.5 / dt + delta) * f0 - f1) / dt
        tau[-2] = -2.0 * f0 / dt**2
        tau[-3] = 0.5 * f0 / dt**2
        return tau

    def march_backward(self, rhs=None, terminal=None, delta=0.0):
        """Exact transpose of the homogeneous-data forward map.

        Solves ``S^T lambda = W rhs + tau`` backward in time, where ``S`` is
        the block lower-triangular matrix of the forward scheme, ``W`` holds
        the trapezoid time weights and ``tau`` is :meth:`terminal_rhs` of
        ``terminal = (f0, f1)``.  Level m of the result is the multiplier of
        the equation centred at level m; the last level is zero.
        """
        g = self.grid
        N, nx, dt = g.nt, g.nx, g.dt
        batched = False
        rho = None
        if rhs is not None:
            r = rhs.values if isinstance(rhs, SpaceTimeField) else rhs
            r, batched = _as_batch(r, (N + 1, nx + 1))
            rho = g.time_weights[:, None, None] * r[:, 1:-1]
        if terminal is not None:
            f0, b0 = _as_batch(terminal[0], (nx + 1,))
            f1, b1 = _as_batch(terminal[1], (nx + 1,))
            batched |= b0 or b1
            tau = self.terminal_rhs(f0, f1, delta)
            rho = tau if rho is None else rho + tau
        if rho is None:
            rho = np.zeros((N + 1, nx - 1, 1))

        lam = np.zeros((N + 1,) + rho.shape[1:])
        for l in range(N, 0, -1):
            acc = rho[l].copy()
            if l <= N - 1:
                acc -= -2.0 * lam[l] / dt**2 + self._lower_T(l, lam[l])[1:-1]
            if l + 1 <= N - 1:
                bl = self.b[l + 1, 1:-1, None] * lam[l + 1]
                acc -= lam[l + 1] / dt**2 - self._grad_T(bl)[1:-1] / (2.0 * dt)
            if l - 1 == 0:
                lam[0] = acc * dt**2
            else:
                lam[l - 1] = self._solve_step(l - 1, acc, transpose=True)
        out = np.zeros((N + 1, nx + 1) + rho.shape[2:])
        out[:, 1:-1] = lam
        if batched:
            return out
        return SpaceTimeField(out[..., 0], g)

    def conormal_trace(self, p, side):
        """Boundary sensitivity carried by a multiplier field from :meth:`march_backward`.

        Exact transpose of :meth:`boundary_to_state` in the pairing
        ``<B w, r>_Q = <w, B* r>_Sigma``; approximates ``-(1/k^2) p_nu``
        (``(p_{N-1} - p_N)/dy`` at the right end when ``k = 1``).
        """
        g = self.grid
        N, dt, dy = g.nt, g.dt, g.dy
        vals = p.values if isinstance(p, SpaceTimeField) else np.asarray(p)
        if side == "right":
            lam = vals[:, -2]
            sgn = 1.0
            a_b = self.a_half[:, -1]
            c_b = self.c[:, -2]
            b_b = self.b[:, -2]
        else:
            lam = vals[:, 1]
            sgn = -1.0
            a_b = self.a_half[:, 0]
            c_b = self.c[:, 1]
            b_b = self.b[:, 1]
        # broadcast the per-level coefficients over a trailing batch axis
        shape = (-1,) + (1,) * (lam.ndim - 1)
        a_b, c_b, b_b = a_b.reshape(shape), c_b.reshape(shape), b_b.reshape(shape)
        row_factor = np.ones(N + 1).reshape(shape)
        row_factor[0] = 0.5
        gam = row_factor * (-a_b * lam / dy**2 + sgn * c_b * lam / (2.0 * dy))
        # implicit b-terms: row l-1 (for l-1 >= 1) and row l+1 (for l+1 <= N-1)
        bl = sgn * b_b * lam / (4.0 * dt * dy)
        gam[2:] += bl[1:-1]
        gam[:N - 1] -= bl[1:N]
        return -dy * gam

    # -- terminal values and residuals ---------------------------------------

    def terminal_of(self, field):
        V = field.values if isinstance(field, SpaceTimeField) else field
        dt = self.grid.dt
        pos = V[-1].copy()
        vel = (3.0 * V[-1] - 4.0 * V[-2] + V[-3]) / (2.0 * dt)
        pos[0] = pos[-1] = 0.0
        vel[0] = vel[-1] = 0.0
        return TerminalPair(pos, vel)

    def residual_forward(self, field, source=None, init_velocity=None):
        """Residual of every scheme row (interior nodes), shape ``(nt, nx-1)``."""
        g = self.grid
        dt = g.dt
        V = (field.values if isinstance(field, SpaceTimeField) else field)[..., None]
        N, nx = g.nt, g.nx
        src = np.zeros((N + 1, nx + 1, 1))
        if source is not None:
            s = source.values if isinstance(source, SpaceTimeField) else source
            src = np.asarray(s, dtype=float)[..., None]
        v1 = np.zeros((nx + 1, 1)) if init_velocity is None else np.asarray(init_velocity)[:, None]
        res = np.zeros((N, nx - 1))
        lh = self._lower(0, V[0]) + self.b[0, 1:-1, None] * self._grad(v1)
        res[0] = ((V[1, 1:-1] - V[0, 1:-1] - dt * v1[1:-1]) / dt**2 + 0.5 * lh - 0.5 * src[0, 1:-1])[:, 0]
        for m in range(1, N):
            bm = self.b[m, 1:-1, None]
            r = (
                (V[m + 1, 1:-1] - 2 * V[m, 1:-1] + V[m - 1, 1:-1]) / dt**2
                + bm * (self._grad(V[m + 1]) - self._grad(V[m - 1])) / (2 * dt)
                + self._lower(m, V[m])
                - src[m, 1:-1]
            )
            res[m] = r[:, 0]
        return res

    def residual_backward(self, p, rhs=None, terminal=None, delta=0.0):
        """Residual of the transposed system, shape ``(nt, nx-1)`` (levels 1..nt)."""
        g = self.grid
        N, nx, dt = g.nt, g.nx, g.dt
        lam = (p.values if isinstance(p, SpaceTimeField) else p)[:, 1:-1, None]
        rho = np.zeros((N + 1, nx - 1, 1))
        if rhs is not None:
            r = rhs.values if isinstance(rhs, SpaceTimeField) else rhs
            rho += g.time_weights[:, None, None] * np.asarray(r)[:, 1:-1, None]
        if terminal is not None:
            rho += self.terminal_rhs(np.asarray(terminal[0])[:, None],
                                     np.asarray(terminal[1])[:, None], delta)
        res = np.zeros((N, nx - 1))
        for l in range(1, N + 1):
            col = np.zeros((nx - 1, 1))
            # row l-1 acting on v^l
            if l - 1 == 0:
                col += lam[0] / dt**2
            else:
                bl = self.b[l - 1, 1:-1, None] * lam[l - 1]
                col += lam[l - 1] / dt**2 + self._grad_T(bl)[1:-1] / (2 * dt)
            if l <= N - 1:
                col += -2.0 * lam[l] / dt**2 + self._lower_T(l, lam[l])[1:-1]
            if l + 1 <= N - 1:
                bl = self.b[l + 1, 1:-1, None] * lam[l + 1]
                col += lam[l + 1] / dt**2 - self._grad_T(bl)[1:-1] / (2 * dt)
            res[l - 1] = (col - rho[l])[:, 0]
        return res
