"""Moving-interval geometry and the coefficients of the rescaled wave operator.

The physical interval at time ``t`` is ``(0, k(t))``.  Writing
``u(x, t) = v(x / k(t), t)`` turns ``u'' - u_xx = 0`` into ``v'' + L v = 0`` on
the fixed cylinder ``(0, 1) x (0, T)`` with

    L v = -(a v_y)_y + b v'_y + c v_y

    a = (1 - k'^2 y^2) / k^2
    b = -2 k' y / k
    c = ((1 - n) k'^2 - k'' k) y / k^2

``n`` is kept as a parameter so the closed forms can be checked for any
dimension, but every solver in the package works with ``n = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .errors import HyperbolicityViolation, OutOfDomain

FAMILIES = ("constant", "linear", "sinusoidal", "custom-sampled")
SIDES = ("left", "right")

# points per unit time used when checking k on [0, T]
_CHECK_DENSITY = 2000


@dataclass(frozen=True)
class ScaleFunction:
    """Scaling k(t) of the moving interval, with first and second derivatives.

    Parameters
    ----------
    family : str
        One of ``constant`` (``[c]``), ``linear`` (``[k0, slope]``),
        ``sinusoidal`` (``[amplitude, frequency, offset]``, i.e.
        ``offset + amplitude*sin(frequency*t)``) or ``custom-sampled``.
    params : sequence of float
        Family parameters.  For ``custom-sampled`` use :meth:`from_samples`.
    horizon : float
        Final time T.  Positivity and ``sup |k'| < 1`` are checked on [0, T]
        at construction.
    """

    family: str
    params: tuple
    horizon: float
    samples: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown scale family {self.family!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        expected = {"constant": 1, "linear": 2, "sinusoidal": 3, "custom-sampled": 0}
        if len(self.params) != expected[self.family]:
            raise ValueError(
                f"{self.family} takes {expected[self.family]} parameters, "
                f"got {len(self.params)}"
            )
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.family == "custom-sampled":
            object.__setattr__(self, "_spline", self._build_spline())
        self.validate()

    # -- constructors ---------------------------------------------------

    @classmethod
    def constant(cls, value=1.0, horizon=1.0):
        return cls("constant", (value,), horizon)

    @classmethod
    def linear(cls, k0, slope, horizon):
        return cls("linear", (k0, slope), horizon)

    @classmethod
    def sinusoidal(cls, amplitude, frequency, offset, horizon):
        return cls("sinusoidal", (amplitude, frequency, offset), horizon)

    @classmethod
    def from_samples(cls, times, values, derivatives=None):
        """Cubic interpolant through ``(times, values)``.

        When ``derivatives`` are supplied a Hermite cubic is used and the
        samples must agree with second-order finite differences of
        ``values`` to a relative tolerance of 1e-6.
        """
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 4:
            raise ValueError("need at least 4 matching time/value samples")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("sample times must start at 0 and increase")
        packed = (tuple(times), tuple(values))
        if derivatives is not None:
            derivatives = np.asarray(derivatives, dtype=float)
            if derivatives.shape != values.shape:
                raise ValueError("derivative samples must match value samples")
            fd = np.gradient(values, times, edge_order=2)
            scale = max(1.0, float(np.max(np.abs(derivatives))))
            if np.max(np.abs(fd - derivatives)) > 1e-6 * scale:
                raise HyperbolicityViolation(
                    "derivative samples inconsistent with finite differences "
                    "of the value samples"
                )
            packed = packed + (tuple(derivatives),)
        return cls("custom-sampled", (), float(times[-1]), samples=packed)

    @classmethod
    def from_config(cls, spec, horizon):
        """Build from ``{"family": ..., "params": [...]}``."""
        family = spec["family"]
        if family == "custom-sampled":
            return cls.from_samples(
                spec["times"], spec["values"], spec.get("derivatives")
            )
        return cls(family, tuple(spec.get("params", ())), horizon)

    def _build_spline(self):
        if len(self.samples) == 3:
            t, v, d = (np.asarray(s) for s in self.samples)
            return CubicHermiteSpline(t, v, d)
        t, v = (np.asarray(s) for s in self.samples)
        return CubicSpline(t, v)

    # -- evaluation -----------------------------------------------------

    def value(self, t):
        return self._eval(t, 0)

    def d1(self, t):
        return self._eval(t, 1)

    def d2(self, t):
        return self._eval(t, 2)

    def _eval(self, t, order):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.family == "constant":
            return np.full_like(t, p[0] if order == 0 else 0.0)
        if self.family == "linear":
            k0, s = p
            if order == 0:
                return k0 + s * t
            return np.full_like(t, s if order == 1 else 0.0)
        if self.family == "sinusoidal":
            amp, freq, off = p
            if order == 0:
                return off + amp * np.sin(freq * t)
            if order == 1:
                return amp * freq * np.cos(freq * t)
            return -amp * freq**2 * np.sin(freq * t)
        return self._spline(t, order)

    def validate(self):
        """Check positivity and ``sup |k'| < 1`` on a dense sample of [0, T]."""
        m = max(200, int(_CHECK_DENSITY * self.horizon))
        t = np.linspace(0.0, self.horizon, m + 1)
        k = self.value(t)
        if not np.all(np.isfinite(k)) or np.min(k) <= 0:
            raise HyperbolicityViolation("k(t) must stay positive on [0, T]")
        slope = float(np.max(np.abs(self.d1(t))))
        if slope >= 1.0:
            raise HyperbolicityViolation(
                f"sup |k'| = {slope:.6g} >= 1: the rescaled operator is not "
                "uniformly coercive"
            )

    def max_slope(self):
        t = np.linspace(0.0, self.horizon, max(200, int(_CHECK_DENSITY * self.horizon)) + 1)
        return float(np.max(np.abs(self.d1(t))))

    def to_config(self):
        if self.family == "custom-sampled":
            out = {"family": self.family, "times": list(self.samples[0]),
                   "values": list(self.samples[1])}
            if len(self.samples) == 3:
                out["derivatives"] = list(self.samples[2])
            return out
        return {"family": self.family, "params": list(self.params)}


@dataclass(frozen=True)
class Segment:
    """Part of the lateral boundary: one end point over a time window."""

    side: str
    t_start: float
    t_end: float

    def mask(self, times):
        """0/1 weights of the samples at ``times`` that belong to the segment.

        The window is half open, ``[t_start, t_end)``, except that a window
        ending at the horizon also keeps its final sample.
        """
        times = np.asarray(times, dtype=float)
        eps = 1e-12 * max(1.0, abs(self.t_end))
        inside = (times >= self.t_start - eps) & (times < self.t_end - eps)
        inside |= np.isclose(times, self.t_end) & np.isclose(self.t_end, times[-1])
        return inside.astype(float)


@dataclass(frozen=True)
class Geometry:
    """Where the leader and the follower act.

    ``gamma0`` is the controlled part of the boundary of (0, 1).  In
    ``additive`` mode both controls act on all of ``gamma0 x (0, T)`` and the
    Dirichlet datum is their sum.  In ``disjoint`` mode the leader takes the
    left end and the follower the right end when ``gamma0 == "both"``;
    with a single controlled end the time window is split at
    ``split * T`` (leader first).
    """

    gamma0: str = "right"
    mode: str = "additive"
    n: int = 1
    split: float = 0.5

    def __post_init__(self):
        if self.gamma0 not in ("left", "right", "both"):
            raise ValueError(f"gamma0 must be left, right or both, got {self.gamma0!r}")
        if self.mode not in ("additive", "disjoint"):
            raise ValueError(f"mode must be additive or disjoint, got {self.mode!r}")
        if self.n < 1:
            raise ValueError("n must be a positive integer")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must lie in (0, 1)")
        if self.mode == "additive" and self.gamma0 == "both":
            raise ValueError("additive mode needs a single controlled end point")

    @property
    def distance(self):
        """sup over the interval of the distance to the controlled boundary."""
        return 0.5 if self.gamma0 == "both" else 1.0

    def segments(self, horizon):
        """Return ``(sigma1, sigma2)`` for a horizon T."""
        T = float(horizon)
        if self.mode == "additive":
            seg = Segment(self.gamma0, 0.0, T)
            return seg, seg
        if self.gamma0 == "both":
            return Segment("left", 0.0, T), Segment("right", 0.0, T)
        cut = self.split * T
        return Segment(self.gamma0, 0.0, cut), Segment(self.gamma0, cut, T)


class Coefficients(NamedTuple):
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


class AdjointCoefficients(NamedTuple):
    """Coefficients of

        L* p = -(a p_y)_y + mixed p'_y + velocity p' + drift p_y + reaction p
    """

    a: np.ndarray
    mixed: np.ndarray
    velocity: np.ndarray
    drift: np.ndarray
    reaction: np.ndarray


def _kvals(k, t):
    t = np.asarray(t, dtype=float)
    return k.value(t), k.d1(t), k.d2(t)


def eval_coefficients(k, y, t, n=1):
    """Evaluate ``(a, b, c)`` of L at ``(y, t)`` (broadcasting)."""
    y = np.asarray(y, dtype=float)
    kv, k1, k2 = _kvals(k, t)
    a = (1.0 - k1**2 * y**2) / kv**2
    b = -2.0 * k1 * y / kv
    c = ((1 - n) * k1**2 - k2 * kv) * y / kv**2
    a, b, c = np.broadcast_arrays(a, b, c)
    if np.any(a <= 0):
        raise HyperbolicityViolation("diffusion coefficient a(y, t) <= 0")
    return Coefficients(a.copy(), b.copy(), c.copy())


def eval_adjoint_coefficients(k, y, t, n=1):
    """Evaluate the coefficients of the formal adjoint L*."""
    y = np.asarray(y, dtype=float)
    kv, k1, k2 = _kvals(k, t)
    a = (1.0 - k1**2 * y**2) / kv**2
    if np.any(a <= 0):
        raise HyperbolicityViolation("diffusion coefficient a(y, t) <= 0")
    mixed = -2.0 * k1 * y / kv
    velocity = -2.0 * n * k1 / kv + 0.0 * y
    drift = ((n + 1) * k1**2 - k2 * kv) * y / kv**2
    reaction = (n * (n + 1) * k1**2 - n * k2 * kv) / kv**2 + 0.0 * y
    return AdjointCoefficients(*(np.array(v, dtype=float) for v in
                                 np.broadcast_arrays(a, mixed, velocity, drift, reaction)))


def holmgren_time_ok(T, geom):
    """True when ``T > 2 d`` with d the largest distance to the controlled ends."""
    if not T > 0:
        raise ValueError("T must be positive")
    return bool(T > 2.0 * geom.distance)


def pull_back_state(v, k, x):
    """Sample ``u(x, t) = v(x / k(t), t)`` on every time level.

    ``v`` is a space-time field on the unit cylinder; values between grid
    nodes are linearly interpolated in y.  Returns an array of shape
    ``(nt + 1, len(x))``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grid = v.grid
    kt = k.value(grid.t)
    if np.any(x < 0):
        raise OutOfDomain("physical samples must be nonnegative")
    tol = 1e-12
    if np.any(x[None, :] > kt[:, None] * (1 + tol)):
        raise OutOfDomain("sample x lies beyond the moving end point k(t)")
    out = np.empty((grid.nt + 1, x.size))
    for m in range(grid.nt + 1):
        out[m] = np.interp(np.minimum(x / kt[m], 1.0), grid.y, v.values[m])
    return out
