r"""Eigenfunction-series solutions and their boundary traces.

For the initial value problem

.. math::

    u(x,t) = \sum_n \big[p_n E_{\alpha,1}(-\lambda_n t^\alpha)
             + p_n^0\, t E_{\alpha,2}(-\lambda_n t^\alpha)\big]\varphi_n(x)

and, for the source problem with zero initial data,

.. math::

    \tilde u(x,t) = \sum_n g_n \varphi_n(x) \int_0^t \theta(t-s)\,
                    s^{\alpha-1}E_{\alpha,\alpha}(-\lambda_n s^\alpha)\,ds .

The source convolution is integrated by parts against
:math:`K_n(s) = s^\alpha E_{\alpha,\alpha+1}(-\lambda_n s^\alpha)`, which is
bounded, and then evaluated by Gauss-Legendre rules on dyadic panels that
resolve every scale :math:`\lambda_n^{-1/\alpha}`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gamma

from . import mittag_leffler as ml_mod
from .errors import DomainError, UsageError
from .sturm_liouville import (InitialData, ModeCoefficients, Potential, RobinPair,
                              eigenfunction_values, mode_coefficients)

#: traces are only evaluated for t >= T_MIN_FRACTION * max(t)
T_MIN_FRACTION = 1e-4

_PANELS = 20
_GAUSS = 8


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    potential: Potential
    robin: RobinPair

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and 0.0 < self.alpha < 2.0):
            raise DomainError(f"alpha must lie in (0,2), got {self.alpha!r}")


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """Samples of ``u(0,t)`` and ``u(1,t)``; ``truncation`` is an error estimate."""

    times: np.ndarray
    left: np.ndarray
    right: np.ndarray
    truncation: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t, l, r = (np.asarray(v, dtype=float) for v in (self.times, self.left, self.right))
        if not (t.ndim == l.ndim == r.ndim == 1 and t.size == l.size == r.size):
            raise UsageError("trace arrays must be 1-d and share their length")
        if t.size and (t[0] <= 0.0 or np.any(np.diff(t) <= 0.0)):
            raise UsageError("trace times must be positive and strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(l)) and np.all(np.isfinite(r))):
            raise UsageError("trace values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "left", l)
        object.__setattr__(self, "right", r)

    def __len__(self):
        return self.times.size

    def stacked(self):
        """``(2, len)`` array of left and right values."""
        return np.vstack([self.left, self.right])


class SourceSpec:
    """Separable source ``theta(t) g(x)``.

    ``g`` is held as :class:`InitialData` on the spectral mesh and ``theta``
    as samples on ``[0, T]`` interpolated by a C2 cubic spline, unless an
    exact callable pair ``(theta, dtheta)`` is supplied.
    """

    def __init__(self, g, theta_times, theta_values, dtheta=None, theta_fn=None):
        self.g = g
        tt = np.asarray(theta_times, dtype=float)
        tv = np.asarray(theta_values, dtype=float)
        if tt.ndim != 1 or tt.shape != tv.shape or tt.size < 4 or tt[0] != 0.0:
            raise UsageError("theta needs at least 4 samples starting at t = 0")
        if not np.any(tv != 0.0):
            raise UsageError("theta must not vanish identically")
        self.theta_times, self.theta_values = tt, tv
        spline = CubicSpline(tt, tv)
        self._theta = theta_fn or spline
        self._dtheta = dtheta or spline.derivative()

    @classmethod
    def from_functions(cls, mesh, g, theta, T, dtheta=None, samples=2001):
        tt = np.linspace(0.0, T, samples)
        tv = np.broadcast_to(np.asarray(theta(tt), dtype=float), tt.shape)
        exact = theta if dtheta is not None else None
        return cls(InitialData.from_functions(mesh, g), tt, tv, dtheta=dtheta, theta_fn=exact)

    @property
    def horizon(self):
        return self.theta_times[-1]

    def theta(self, t):
        return self._theta(t)

    def dtheta(self, t):
        return self._dtheta(t)


def _check_grid(t_grid, t_min=None):
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0.0):
        raise UsageError("time grid must be strictly increasing")
    floor = T_MIN_FRACTION * t[-1] if t_min is None else t_min
    if t[0] <= 0.0 or t[0] < floor:
        raise UsageError(f"time grid starts at {t[0]:.3g}, below t_min = {floor:.3g}")
    return t


def _check_coeffs(params, data, spec, coeffs):
    if coeffs.n > spec.n:
        raise UsageError(f"{coeffs.n} coefficients for a {spec.n}-mode spectrum")
    if params.alpha > 1.0 and (data is None or data.a0 is None) and coeffs.pn0 is None:
        raise UsageError("alpha > 1 requires the initial velocity a0")


def _time_factors(alpha, lam, t, coeffs):
    """Mode-by-time matrix of ``p_n E_{a,1} + p_n^0 t E_{a,2}``."""
    n = coeffs.n
    z = -lam[:n, None] * t[None, :] ** alpha
    out = coeffs.pn[:, None] * ml_mod.ml(alpha, 1.0, z)
    if alpha > 1.0 and coeffs.pn0 is not None:
        out = out + coeffs.pn0[:, None] * t[None, :] * ml_mod.ml(alpha, 2.0, z)
    return out


def _truncation(factors, phi_abs):
    # tail of an n^-2 summable series is about N times its last term
    n = factors.shape[0]
    last = np.abs(factors[-min(2, n):]) * phi_abs[-min(2, n):, None]
    return float(n * last.max()) if n else 0.0


def solve_ivp(params, data, spec, coeffs, x_grid, t_grid, t_min=None):
    """Field samples ``u(x_j, t_k)`` as an array of shape ``(len(t), len(x))``.

    Returns ``(u, truncation_estimate)``.
    """
    _check_coeffs(params, data, spec, coeffs)
    t = _check_grid(t_grid, t_min)
    phi = eigenfunction_values(spec.truncate(coeffs.n), x_grid)
    f = _time_factors(params.alpha, spec.lambdas, t, coeffs)
    return f.T @ phi, _truncation(f, np.max(np.abs(phi), axis=1))


def boundary_trace(params, data, spec, coeffs, t_grid, t_min=None):
    """Traces at ``x = 0`` (where every ``phi_n = 1``) and ``x = 1``."""
    _check_coeffs(params, data, spec, coeffs)
    t = _check_grid(t_grid, t_min)
    f = _time_factors(params.alpha, spec.lambdas, t, coeffs)
    phi1 = spec.phi1[:coeffs.n]
    trunc = _truncation(f, np.maximum(1.0, np.abs(phi1)))
    return BoundaryTrace(t, f.sum(axis=0), phi1 @ f, trunc, {"modes": coeffs.n, "alpha": params.alpha})


def trace_from_modes(alpha, lambdas, pn, phi1, t_grid, pn0=None):
    """Traces of a finite modal sum; used by the fitters and experiments."""
    c = ModeCoefficients(np.asarray(pn, dtype=float), None if pn0 is None else np.asarray(pn0, dtype=float))
    t = np.asarray(t_grid, dtype=float)
    f = _time_factors(alpha, np.asarray(lambdas, dtype=float), t, c)
    return BoundaryTrace(t, f.sum(axis=0), np.asarray(phi1)[:c.n] @ f)


# {{{ source problem

def _active(gn):
    # modes whose weight is below 1e-12 of the largest change no trace digit we keep
    return np.flatnonzero(np.abs(gn) > 1e-12 * np.max(np.abs(gn)))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GAUSS)


def source_response(alpha, lam, source, t):
    """``int_0^t theta(t-s) s^(a-1) E_{a,a}(-lam s^a) ds``, shape ``(len(lam), len(t))``.

    Integration by parts gives ``theta(0) K(t) + int_0^t theta'(t-s) K(s) ds``
    with ``K(s) = s^a E_{a,a+1}(-lam s^a)``. The integral uses geometric
    panels from ``t`` down to ``eps = 2^-12 min(t, lam^(-1/a))``; on ``[0, eps]``
    the leading term ``K(s) ~ s^a / Gamma(a+1)`` is integrated exactly.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t > source.horizon * (1 + 1e-12)):
        raise UsageError("time grid exceeds the horizon on which theta is given")
    tt = t[None, :]
    eps = 2.0**-12 * np.minimum(tt, lam[:, None] ** (-1.0 / alpha))
    # panel edges t * (eps/t)^(j/P), j = 0..P
    j = np.arange(_PANELS + 1.0) / _PANELS
    edges = tt[..., None] * (eps / tt)[..., None] ** j
    hi, lo = edges[..., :-1, None], edges[..., 1:, None]
    s = (lo + 0.5 * (hi - lo) * (_GL_X + 1.0)).reshape(*eps.shape, -1)
    w = (0.5 * (hi - lo) * _GL_W).reshape(s.shape)
    K = s**alpha * ml_mod.ml(alpha, alpha + 1.0, -lam[:, None, None] * s**alpha)
    integral = np.sum(K * source.dtheta(tt[..., None] - s) * w, axis=-1)
    inner = source.dtheta(tt) * eps ** (alpha + 1.0) / gamma(alpha + 2.0)
    Kt = t**alpha * ml_mod.ml(alpha, alpha + 1.0, -lam[:, None] * tt**alpha)
    return float(source.theta(0.0)) * Kt + integral + inner


def solve_source(params, source, spec, t_grid, n_modes=None, t_min=None):
    """Boundary traces of the source problem with zero initial data."""
    t = _check_grid(t_grid, t_min)
    coeffs = mode_coefficients(source.g, spec)
    n = spec.n if n_modes is None else int(n_modes)
    gn = coeffs.pn[:n]
    if not np.any(gn != 0.0):
        return BoundaryTrace(t, np.zeros_like(t), np.zeros_like(t), 0.0, {"modes": n})
    active = _active(gn)
    resp = np.zeros((n, t.size))
    resp[active] = source_response(params.alpha, spec.lambdas[active], source, t)
    f = gn[:, None] * resp
    phi1 = spec.phi1[:n]
    trunc = _truncation(f, np.maximum(1.0, np.abs(phi1)))
    return BoundaryTrace(t, f.sum(axis=0), phi1 @ f, trunc, {"modes": n, "alpha": params.alpha})


# }}}

# {{{ Duhamel identity

def _graded(a, b, power, n=48):
    """Gauss rule on ``[a,b]`` with nodes clustered at ``a`` (``x - a ~ v**power``)."""
    g, w = np.polynomial.legendre.leggauss(n)
    v = 0.5 * (g + 1.0)
    return a + (b - a) * v**power, 0.5 * w * (b - a) * power * v ** (power - 1.0)


def _memory_nodes(t, mu, n=48):
    """Nodes/weights for ``int_0^t (t-s)^(-mu) f(s) ds``, weight folded in.

    ``[0, t/2]`` is graded at 0 for the ``s^alpha`` onset of ``f``; on
    ``[t/2, t]`` the substitution ``t - s = (t/2) w^(1/(1-mu))`` absorbs the
    weight.
    """
    s1, w1 = _graded(0.0, 0.5 * t, 3.0, n)
    w1 = w1 * (t - s1) ** (-mu)
    g, w = np.polynomial.legendre.leggauss(n)
    v = 0.5 * (g + 1.0)
    q = 1.0 / (1.0 - mu)
    half = 0.5 * t
    s2 = t - half * v**q
    # (t-s)^(-mu) ds = half^(1-mu) q v^(q(1-mu)-1) dv and q(1-mu) = 1
    w2 = 0.5 * w * half ** (1.0 - mu) * q
    return np.concatenate([s1, s2]), np.concatenate([w1, w2])


def duhamel_check(params, source, spec, t_grid, n_modes=None):
    """Largest violation over ``t_grid`` and both ends of the Duhamel identity.

    ``0 < alpha < 1``: ``I^(1-a)[u~] = theta * u`` with ``u`` from ``a = g``;
    ``alpha = 1``: ``u~ = theta * u``;
    ``1 < alpha < 2``: ``I^(2-a)[u~] = theta * u`` with ``u`` from ``a = 0, a0 = g``.
    Both sides are computed by quadrature from the two solver paths.
    """
    alpha = params.alpha
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    n = spec.n if n_modes is None else int(n_modes)
    gn = mode_coefficients(source.g, spec).pn[:n]
    if not np.any(gn != 0.0):
        return 0.0
    keep = _active(gn)
    gn, lam = gn[keep], spec.lambdas[keep]
    n = keep.size
    ends = np.vstack([np.ones(n), spec.phi1[keep]])
    if alpha > 1.0:
        coeffs = ModeCoefficients(np.zeros(n), gn)
    else:
        coeffs = ModeCoefficients(gn)
    worst = 0.0
    for tk in t:
        if alpha == 1.0:
            lhs = ends @ (gn * source_response(alpha, lam, source, [tk])[:, 0])
        else:
            mu = alpha if alpha < 1.0 else alpha - 1.0
            s, w = _memory_nodes(tk, mu)
            resp = gn[:, None] * source_response(alpha, lam, source, s)
            lhs = ends @ resp @ w / gamma(1.0 - mu)
        s, w = _memory_nodes(tk, 0.0)
        u = _time_factors(alpha, lam, s, coeffs)
        rhs = ends @ (u * source.theta(tk - s)[None, :]) @ w
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


# }}}

def add_noise(trace, level, rng):
    """Additive Gaussian noise with standard deviation ``level * max|trace|`` per end."""
    if level < 0.0:
        raise UsageError("noise level must be non-negative")
    if level == 0.0:
        return trace
    sl = level * np.max(np.abs(trace.left))
    sr = level * np.max(np.abs(trace.right))
    return BoundaryTrace(trace.times, trace.left + sl * rng.standard_normal(len(trace)),
                        trace.right + sr * rng.standard_normal(len(trace)), trace.truncation,
                        dict(trace.meta, noise=level))
