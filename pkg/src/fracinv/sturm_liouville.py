r"""Robin Sturm-Liouville problems on the unit interval.

The operator is :math:`A\varphi = -\varphi'' + p\varphi` with
:math:`\varphi'(0) - h\varphi(0) = 0` and :math:`\varphi'(1) + H\varphi(1) = 0`.
Eigenfunctions are normalized by :math:`\varphi_n(0) = 1`, so they solve the
initial value problem :math:`\varphi(0) = 1, \varphi'(0) = h`.

Integration uses a fourth-order Magnus scheme on a fixed mesh. Each mesh
cell carries 8 Gauss-Legendre points, and the integrator steps through them,
so inner products come at no extra cost. Magnus steps are exact for constant
``p`` at any ``lambda``, which keeps high modes accurate without adaptivity.
Eigenvalues are located with a scaled Pruefer angle, which counts zeros and
so cannot skip a mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError, NumericalError, SpectralError, UsageError

GAUSS_POINTS = 8
DEFAULT_CELLS = 256

_G2 = np.sqrt(3.0) / 6.0


class Potential:
    """Potential ``p`` given by samples on a uniform grid of ``M + 1`` nodes.

    Between nodes ``p`` is the not-a-knot cubic spline through the samples.
    """

    def __init__(self, samples, allow_negative=False):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 1 or samples.size < 9:
            raise DomainError("potential needs at least 9 samples (M >= 8)")
        if not np.all(np.isfinite(samples)):
            raise DomainError("potential samples must be finite")
        if not allow_negative and np.any(samples < 0.0):
            raise DomainError("potential must be non-negative on [0,1]")
        self.samples = samples
        self.samples.setflags(write=False)
        self.grid = np.linspace(0.0, 1.0, samples.size)
        self._spline = CubicSpline(self.grid, samples)

    @classmethod
    def from_function(cls, f, m=64, **kw):
        x = np.linspace(0.0, 1.0, m + 1)
        return cls(np.broadcast_to(np.asarray(f(x), dtype=float), x.shape), **kw)

    @classmethod
    def constant(cls, c, m=16):
        return cls(np.full(m + 1, float(c)))

    @property
    def m(self):
        return self.samples.size - 1

    def __call__(self, x, nu=0):
        return self._spline(x, nu)

    def integral(self):
        """:math:`\\int_0^1 p`."""
        return float(self._spline.integrate(0.0, 1.0))

    def antiderivative(self, x):
        return self._spline.antiderivative()(x)

    def __repr__(self):
        return f"Potential(m={self.m}, min={self.samples.min():.4g}, max={self.samples.max():.4g})"


@dataclass(frozen=True)
class RobinPair:
    h: float
    H: float

    def __post_init__(self):
        for name in ("h", "H"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0.0):
                raise DomainError(f"Robin coefficient {name} must be positive, got {v!r}")


class Mesh:
    """Uniform cells on [0,1] with 8 Gauss-Legendre points per cell.

    ``nodes`` are the cell boundaries (the x-grid of all samples),
    ``quad_x``/``quad_w`` the composite quadrature rule and ``step_x`` the
    merged, sorted integration points.
    """

    def __init__(self, cells=DEFAULT_CELLS):
        cells = int(cells)
        if cells < 8:
            raise DomainError("mesh needs at least 8 cells")
        self.cells = cells
        self.nodes = np.linspace(0.0, 1.0, cells + 1)
        g, w = np.polynomial.legendre.leggauss(GAUSS_POINTS)
        dx = 1.0 / cells
        left = self.nodes[:-1, None]
        self.quad_x = (left + 0.5 * dx * (g + 1.0)).ravel()
        self.quad_w = np.tile(0.5 * dx * w, cells)
        pts = np.concatenate([left, self.quad_x.reshape(cells, GAUSS_POINTS)], axis=1).ravel()
        self.step_x = np.append(pts, 1.0)
        stride = GAUSS_POINTS + 1
        self.node_idx = np.arange(0, self.step_x.size, stride)
        self.quad_idx = np.setdiff1d(np.arange(self.step_x.size), self.node_idx)

    def __eq__(self, other):
        return isinstance(other, Mesh) and other.cells == self.cells

    def __hash__(self):
        return hash(("Mesh", self.cells))

    def __repr__(self):
        return f"Mesh(cells={self.cells})"

    def integrate(self, f_q):
        """Integrate values at ``quad_x`` (last axis)."""
        return np.asarray(f_q) @ self.quad_w


# {{{ Magnus propagation

def _step_data(potential, mesh):
    x = mesh.step_x
    dx = np.diff(x)
    mid = 0.5 * (x[1:] + x[:-1])
    p1 = potential(mid - _G2 * dx)
    p2 = potential(mid + _G2 * dx)
    return dx, 0.5 * (p1 + p2), np.sqrt(3.0) / 12.0 * dx**2 * (p1 - p2)


def _propagators(dx, pbar, a, lam):
    """Magnus exponentials, shape ``(len(lam), steps)`` per entry."""
    lam = np.asarray(lam, dtype=float)[:, None]
    c = pbar[None, :] - lam
    d = a[None, :] ** 2 + dx[None, :] ** 2 * c
    r = np.sqrt(np.abs(d))
    small = r < 1e-3
    # cosh/sinhc of sqrt(d) for either sign of d
    ch = np.where(d >= 0.0, np.cosh(r), np.cos(r))
    with np.errstate(invalid="ignore", divide="ignore"):
        sh = np.where(d >= 0.0, np.sinh(r), np.sin(r)) / r
    sh = np.where(small, 1.0 + d / 6.0 + d**2 / 120.0, sh)
    ch = np.where(small, 1.0 + d / 2.0 + d**2 / 24.0, ch)
    A = np.broadcast_to(a[None, :], d.shape)
    return ch + sh * A, sh * dx[None, :], sh * dx[None, :] * c, ch - sh * A


def trajectory(potential, h, lam, mesh=None, y0=None):
    """Solve ``-phi'' + p phi = lam phi`` from ``x=0`` along ``mesh.step_x``.

    ``y0`` defaults to ``(1, h)``. Returns ``(phi, dphi)`` each of shape
    ``(len(lam), len(step_x))``.
    """
    mesh = mesh or Mesh()
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if not np.all(np.isfinite(lam)):
        raise NumericalError(f"non-finite spectral parameter {lam}")
    dx, pbar, a = _step_data(potential, mesh)
    e11, e12, e21, e22 = _propagators(dx, pbar, a, lam)
    n = mesh.step_x.size
    phi = np.empty((lam.size, n))
    dphi = np.empty((lam.size, n))
    y0 = (1.0, h) if y0 is None else y0
    u = np.full(lam.size, float(y0[0]))
    v = np.full(lam.size, float(y0[1]))
    phi[:, 0], dphi[:, 0] = u, v
    for k in range(n - 1):
        u, v = e11[:, k] * u + e12[:, k] * v, e21[:, k] * u + e22[:, k] * v
        phi[:, k + 1], dphi[:, k + 1] = u, v
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(dphi))):
        bad = lam[~np.all(np.isfinite(phi), axis=1)]
        raise NumericalError(f"integration overflow at lambda = {bad}")
    return phi, dphi


def shoot(potential, h, lam, mesh=None):
    """Endpoint values ``(phi(1), phi'(1))`` of the normalized solution.

    ``lam`` may be scalar or array; the outputs match its shape.
    """
    scalar = np.ndim(lam) == 0
    phi, dphi = trajectory(potential, h, lam, mesh)
    if scalar:
        return float(phi[0, -1]), float(dphi[0, -1])
    return phi[:, -1].reshape(np.shape(lam)), dphi[:, -1].reshape(np.shape(lam))


def characteristic(potential, robin, lam, mesh=None):
    """``W(lam) = phi'(1) + H phi(1)``; zero exactly at eigenvalues."""
    phi1, dphi1 = shoot(potential, robin.h, lam, mesh)
    return dphi1 + robin.H * phi1


# }}}

# {{{ spectrum

@dataclass(frozen=True, eq=False)
class Spectrum:
    """First ``N`` eigenpairs of the Robin operator.

    ``phis``/``dphis`` hold samples at ``mesh.nodes`` and ``phis_q`` at the
    quadrature points; ``rhos`` are squared norms and ``residuals`` the
    characteristic values ``W(lambda_n)`` at convergence.
    """

    lambdas: np.ndarray
    phis: np.ndarray
    dphis: np.ndarray
    phis_q: np.ndarray
    rhos: np.ndarray
    omega: float
    residuals: np.ndarray
    mesh: Mesh = field(repr=False)
    potential: Potential = field(repr=False)
    robin: RobinPair = field(repr=False)

    @property
    def n(self):
        return self.lambdas.size

    @property
    def phi1(self):
        """Right endpoint values ``phi_n(1)``."""
        return self.phis[:, -1]

    def truncate(self, n):
        return Spectrum(self.lambdas[:n], self.phis[:n], self.dphis[:n], self.phis_q[:n],
                        self.rhos[:n], self.omega, self.residuals[:n], self.mesh,
                        self.potential, self.robin)


def eigenfunction_values(spectrum, x, substeps=4):
    """Values ``phi_n(x)`` at arbitrary points, shape ``(N, len(x))``.

    Each point is reached by Magnus substeps from the mesh node below it.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any((x < 0.0) | (x > 1.0)):
        raise DomainError("evaluation points must lie in [0,1]")
    mesh = spectrum.mesh
    i = np.minimum((x * mesh.cells).astype(int), mesh.cells - 1)
    u = spectrum.phis[:, i].copy()
    v = spectrum.dphis[:, i].copy()
    dx = (x - mesh.nodes[i]) / substeps
    for s in range(substeps):
        mid = mesh.nodes[i] + (s + 0.5) * dx
        p1 = spectrum.potential(mid - _G2 * dx)
        p2 = spectrum.potential(mid + _G2 * dx)
        a = np.sqrt(3.0) / 12.0 * dx**2 * (p1 - p2)
        e11, e12, e21, e22 = _propagators(dx, 0.5 * (p1 + p2), a, spectrum.lambdas)
        u, v = e11 * u + e12 * v, e21 * u + e22 * v
    return u


def omega_constant(potential, robin):
    """``h + H + (1/2) int_0^1 p``."""
    return robin.h + robin.H + 0.5 * potential.integral()


def _phase_target(phi, dphi, k, H, n):
    """Scaled Pruefer angle at x=1 minus its value at the n-th eigenvalue."""
    theta = np.unwrap(np.arctan2(k[:, None] * phi, dphi), axis=1)
    return theta[:, -1] - (n * np.pi - np.arctan(k / H))


def eigensystem(potential, robin, n, mesh=None, tol=1e-14, max_iter=100):
    """Compute the first ``n`` eigenpairs.

    Each eigenvalue is the root of the scaled Pruefer target inside the
    comparison bracket ``[((n-1) pi)^2 + min p, (n pi)^2 + max p]``,
    found by Newton steps safeguarded by bisection.
    """
    n = int(n)
    if n < 1:
        raise DomainError("need at least one eigenvalue")
    mesh = mesh or Mesh()
    idx = np.arange(1, n + 1)
    fine = np.linspace(0.0, 1.0, 8 * potential.m + 1)
    pv = potential(fine)
    pmin, pmax = min(pv.min(), potential.samples.min()), max(pv.max(), potential.samples.max())
    lo = ((idx - 1) * np.pi) ** 2 + pmin
    hi = (idx * np.pi) ** 2 + pmax
    k = np.sqrt(np.maximum(hi, 1.0))
    omega = omega_constant(potential, robin)

    m = idx - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        guess = np.where(m > 0, (m * np.pi + omega / (m * np.pi)) ** 2, 0.5 * (lo + hi))
    lam = np.clip(guess, lo + 1e-3 * (hi - lo), hi - 1e-3 * (hi - lo))

    for _ in range(max_iter):
        phi, dphi = trajectory(potential, robin.h, lam, mesh)
        T = _phase_target(phi, dphi, k, robin.H, idx)
        lo = np.where(T < 0.0, lam, lo)
        hi = np.where(T > 0.0, lam, hi)
        norm2 = mesh.integrate(phi[:, mesh.quad_idx] ** 2)
        dT = k * norm2 / (k**2 * phi[:, -1] ** 2 + dphi[:, -1] ** 2)
        new = lam - T / dT
        outside = ~((new > lo) & (new < hi)) | ~np.isfinite(new)
        new = np.where(outside, 0.5 * (lo + hi), new)
        step = np.abs(new - lam)
        lam = np.where(T == 0.0, lam, new)
        if np.all((step <= tol * np.maximum(lam, 1.0)) | (T == 0.0)):
            break
    else:
        raise SpectralError(f"eigenvalue iteration did not converge (n <= {n})")

    phi, dphi = trajectory(potential, robin.h, lam, mesh)
    _audit(lam, phi, idx)
    phis_q = phi[:, mesh.quad_idx]
    return Spectrum(
        lambdas=lam,
        phis=phi[:, mesh.node_idx],
        dphis=dphi[:, mesh.node_idx],
        phis_q=phis_q,
        rhos=mesh.integrate(phis_q**2),
        omega=omega,
        residuals=dphi[:, -1] + robin.H * phi[:, -1],
        mesh=mesh,
        potential=potential,
        robin=robin,
    )


def _audit(lam, phi, idx):
    if np.any(np.diff(lam) <= 0.0) or np.any(lam <= 0.0):
        raise SpectralError("eigenvalues not positive and increasing; refine the mesh")
    s = np.sign(phi[:, 1:-1])
    zeros = np.count_nonzero(s[:, 1:] * s[:, :-1] < 0.0, axis=1)
    bad = idx[zeros != idx - 1]
    if bad.size:
        raise SpectralError(f"zero count mismatch for modes {bad.tolist()}; refine the mesh")


# }}}

# {{{ initial data and coefficients

def robin_compatible(f, robin, df=None):
    """Correct ``f`` by cubic end terms so it satisfies both Robin conditions.

    ``df`` is the derivative of ``f``; a central difference is used if absent.
    """
    if df is None:
        eps = 1e-6
        df = lambda x: (f(x + eps) - f(x - eps)) / (2 * eps)  # noqa: E731
    c0 = robin.h * f(0.0) - df(0.0)
    c1 = -robin.H * f(1.0) - df(1.0)

    def g(x):
        x = np.asarray(x, dtype=float)
        return f(x) + c0 * x * (1.0 - x) ** 2 + c1 * x**2 * (x - 1.0)

    return g


def robin_defect(values, robin):
    """Robin residuals at both ends from 5-point one-sided differences."""
    v = np.asarray(values, dtype=float)
    dx = 1.0 / (v.shape[-1] - 1)
    c = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12.0 * dx)
    d0 = v[..., :5] @ c
    d1 = -(v[..., ::-1][..., :5] @ c)
    return d0 - robin.h * v[..., 0], d1 + robin.H * v[..., -1]


@dataclass(frozen=True, eq=False)
class InitialData:
    """Initial displacement ``a`` and, for ``alpha > 1``, velocity ``a0``.

    Values are kept at ``mesh.nodes`` and at the quadrature points.
    """

    mesh: Mesh
    a: np.ndarray
    a_q: np.ndarray
    a0: np.ndarray | None = None
    a0_q: np.ndarray | None = None

    @classmethod
    def from_functions(cls, mesh, a, a0=None):
        ev = lambda f, x: np.broadcast_to(np.asarray(f(x), dtype=float), x.shape).copy()  # noqa: E731
        return cls(mesh, ev(a, mesh.nodes), ev(a, mesh.quad_x),
                   None if a0 is None else ev(a0, mesh.nodes),
                   None if a0 is None else ev(a0, mesh.quad_x))

    @classmethod
    def from_samples(cls, mesh, a, a0=None):
        """Build from samples at ``mesh.nodes`` by cubic interpolation."""
        def both(v):
            v = np.asarray(v, dtype=float)
            if v.shape != mesh.nodes.shape:
                raise UsageError(f"expected {mesh.nodes.size} samples, got {v.shape}")
            return v, CubicSpline(mesh.nodes, v)(mesh.quad_x)
        a, a_q = both(a)
        a0, a0_q = both(a0) if a0 is not None else (None, None)
        return cls(mesh, a, a_q, a0, a0_q)

    @classmethod
    def from_modes(cls, spectrum, pn, pn0=None):
        """Finite eigenfunction combination ``sum p_n phi_n``."""
        pn = np.asarray(pn, dtype=float)
        n = pn.size
        a, a_q = pn @ spectrum.phis[:n], pn @ spectrum.phis_q[:n]
        if pn0 is None:
            return cls(spectrum.mesh, a, a_q)
        pn0 = np.asarray(pn0, dtype=float)
        m = pn0.size
        return cls(spectrum.mesh, a, a_q, pn0 @ spectrum.phis[:m], pn0 @ spectrum.phis_q[:m])

    def check_robin(self, robin, tol=1e-4):
        """Raise unless all components lie in the operator domain to ``tol``."""
        for name, v in (("a", self.a), ("a0", self.a0)):
            if v is None:
                continue
            r0, r1 = robin_defect(v, robin)
            scale = max(1.0, np.max(np.abs(v)))
            if max(abs(r0), abs(r1)) > tol * scale:
                raise DomainError(f"{name} violates the Robin conditions (defects {r0:.3g}, {r1:.3g})")
        return self


@dataclass(frozen=True)
class ModeCoefficients:
    pn: np.ndarray
    pn0: np.ndarray | None = None

    @property
    def n(self):
        return self.pn.size

    def magnitude(self):
        """``|p_n| + |p_n^0|`` per mode."""
        out = np.abs(self.pn)
        return out if self.pn0 is None else out + np.abs(self.pn0)


def mode_coefficients(data, spectrum):
    """``p_n = (a, phi_n)/rho_n`` (and ``p_n^0`` when ``a0`` is present)."""
    if data.mesh != spectrum.mesh:
        raise UsageError(f"initial data on {data.mesh} but spectrum on {spectrum.mesh}")
    proj = lambda v: spectrum.mesh.integrate(spectrum.phis_q * v[None, :]) / spectrum.rhos  # noqa: E731
    return ModeCoefficients(proj(data.a_q), None if data.a0_q is None else proj(data.a0_q))


def assumption_check(coeffs, n, tol):
    """Modes ``k <= n`` (1-based) with ``|p_k| + |p_k^0| < tol``."""
    if coeffs.n < n:
        raise UsageError(f"coefficients available for {coeffs.n} modes, {n} requested")
    mag = coeffs.magnitude()[:n]
    return [int(k) + 1 for k in np.flatnonzero(mag < tol)]


def decay_slope(coeffs, start=3):
    """Log-log slope of the running maximum of ``|p_n| + |p_n^0|`` tail."""
    mag = coeffs.magnitude()
    env = np.maximum.accumulate(mag[::-1])[::-1]
    n = np.arange(1, mag.size + 1)
    keep = (n >= start) & (env > 0.0)
    if keep.sum() < 3:
        return -np.inf
    return float(np.polyfit(np.log(n[keep]), np.log(env[keep]), 1)[0])


# }}}
