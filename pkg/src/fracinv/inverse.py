r"""Recovery of the order, the spectrum, the coefficients and the data from boundary traces.

The left trace is the modal sum

.. math::

    u(0, t) = \sum_n p_n E_{\alpha,1}(-\lambda_n t^\alpha)
            + \sum_n p_n^0\, t E_{\alpha,2}(-\lambda_n t^\alpha),

linear in the amplitudes and nonlinear in ``(alpha, lambda_n)``. The fitter
eliminates the amplitudes (variable projection) and optimizes over
``(alpha, log lambda_n)``. The right trace carries the same exponents with
amplitudes scaled by ``phi_n(1)``; those ratios and the eigenvalues are then
matched by a parametrized Sturm-Liouville operator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import least_squares
from scipy.special import gamma

from . import mittag_leffler as ml_mod
from .errors import (BiasWarning, ConditioningWarning, FitError, IllPosednessWarning, NumericalError,
                     UsageError)
from .forward import BoundaryTrace, ModelParams, boundary_trace
from .sturm_liouville import (InitialData, Mesh, ModeCoefficients, Potential, RobinPair, assumption_check,
                              eigensystem, mode_coefficients)

MAX_FIT_MODES = 8
ALPHA_STEP = 0.05
RESIDUAL_TOL = 1e-6
COND_LIMIT = 1e10


# {{{ fingerprint

@dataclass(frozen=True, eq=False)
class SpectralFingerprint:
    """Fitted order, eigenvalues and amplitudes of one trace.

    ``residual`` is the root-mean-square misfit relative to ``max|trace|``.
    ``stderr`` holds linearized standard errors of ``(alpha, lambda_1, ...)``
    and ``cond`` the condition number of the amplitude matrix. ``ok`` is
    false when the fit failed; ``message`` says why.
    """

    alpha: float
    lambdas: np.ndarray
    pn: np.ndarray
    pn0: np.ndarray | None
    residual: float
    ok: bool = True
    message: str = ""
    stderr: np.ndarray | None = None
    cond: float = 1.0

    @property
    def n(self):
        return self.lambdas.size

    @property
    def velocity(self):
        return self.pn0 is not None

    def coefficients(self):
        return ModeCoefficients(self.pn, self.pn0)

    def amplitudes(self):
        """Amplitudes in column order of the design matrix."""
        return self.pn if self.pn0 is None else np.concatenate([self.pn, self.pn0])

    def model(self, t):
        """Fitted left trace at ``t``."""
        return _columns(self.alpha, self.lambdas, np.asarray(t, dtype=float), self.velocity) @ self.amplitudes()

    def require(self):
        """Return ``self`` or raise :class:`FitError` if the fit failed."""
        if not self.ok:
            raise FitError(self.message)
        return self


def _columns(alpha, lam, t, velocity):
    """Design matrix ``[E_{a,1}(-lam t^a) | t E_{a,2}(-lam t^a)]``, one column per mode."""
    z = -lam[None, :] * t[:, None] ** alpha
    cols = [ml_mod.ml(alpha, 1.0, z)]
    if velocity:
        cols.append(t[:, None] * ml_mod.ml(alpha, 2.0, z))
    return np.hstack(cols)


def _dcolumns_dloglam(alpha, lam, t, velocity, A):
    """``lam * d/dlam`` of each column of :func:`_columns` (``A`` is that matrix)."""
    ta = t[:, None] ** alpha
    n = lam.size
    # d/dz E_{a,1} = E_{a,a} / a
    out = [-lam[None, :] * ta * ml_mod.ml(alpha, alpha, -lam[None, :] * ta) / alpha]
    if velocity:
        # d/dz E_{a,2} = (E_{a,1} - E_{a,2}) / (a z), and t E_{a,2} is the second block of A
        e1, e2t = A[:, :n], A[:, n:]
        out.append((t[:, None] * e1 - e2t) / alpha)
    return out


class _Projection:
    """Variable-projection residual and its full (Golub-Pereyra) Jacobian.

    The eigenvalues are parametrized by log gaps, ``lambda_k = sum_{j<=k}
    exp(eta_j)``, which keeps them ordered and stops two of them from merging
    into a spurious double mode. ``theta`` is ``(alpha, eta)`` or just
    ``eta`` when the order is fixed.
    """

    def __init__(self, t, y, velocity, alpha=None):
        self.t, self.y, self.velocity, self.alpha = t, y, velocity, alpha
        self.scale = max(float(np.max(np.abs(y))), 1e-300) * np.sqrt(y.size)
        self._key = None

    def unpack(self, theta):
        if self.alpha is None:
            return float(theta[0]), np.cumsum(np.exp(theta[1:]))
        return self.alpha, np.cumsum(np.exp(theta))

    def _solve(self, theta):
        key = tuple(theta)
        if key == self._key:
            return self._cache
        alpha, lam = self.unpack(theta)
        A = _columns(alpha, lam, self.t, self.velocity)
        Q, R = np.linalg.qr(A)
        c = np.linalg.lstsq(R, Q.T @ self.y, rcond=None)[0]
        r = (self.y - A @ c) / self.scale
        self._key, self._cache = key, (alpha, lam, A, Q, R, c, r)
        return self._cache

    def residual(self, theta):
        return self._solve(theta)[-1]

    def jacobian(self, theta):
        alpha, lam, A, Q, R, c, r = self._solve(theta)
        rr = r * self.scale
        perp = lambda v: v - Q @ (Q.T @ v)  # noqa: E731
        back = lambda w: Q @ np.linalg.lstsq(R.T, w, rcond=None)[0]  # noqa: E731
        n = lam.size
        dcols = _dcolumns_dloglam(alpha, lam, self.t, self.velocity, A)
        J = []
        if self.alpha is None:
            da = 1e-6
            lo, hi = max(alpha - da, 1e-3), min(alpha + da, 2.0 - 1e-3)
            dA = (_columns(hi, lam, self.t, self.velocity) - _columns(lo, lam, self.t, self.velocity)) / (hi - lo)
            J.append(-perp(dA @ c) - back(dA.T @ rr))
        Jl = []
        for k in range(n):
            # only the columns of mode k depend on lambda_k
            idx = [k, n + k] if self.velocity else [k]
            D = np.column_stack([dcols[b][:, k] for b in range(len(idx))])
            w = np.zeros(c.size)
            w[idx] = D.T @ rr
            Jl.append(-perp(D @ c[idx]) - back(w))
        # chain rule from log lambda_k to eta_j (j <= k)
        eta = theta if self.alpha is not None else theta[1:]
        M = np.tril(np.ones((n, n))) * np.exp(eta)[None, :] / lam[:, None]
        J.extend((np.column_stack(Jl) @ M).T)
        return np.column_stack(J) / self.scale

    def amplitudes(self, theta):
        return self._solve(theta)[5]

    def condition(self, theta):
        R = self._solve(theta)[4]
        s = np.linalg.svd(R, compute_uv=False)
        return float(s[0] / s[-1]) if s[-1] > 0 else np.inf


LAMBDA_GRID = np.logspace(-1.0, 4.0, 81)
# starting spectra ((n-1) pi)^2 + c: the leading Sturm-Liouville asymptotics with a range of shifts
START_SHIFTS = (1.5, 4.0, 10.0)
ETA_BOUNDS = (np.log(1e-3), np.log(1e4))
COARSE_SAMPLES = 100


def _to_eta(lam):
    gaps = np.diff(np.concatenate([[0.0], np.sort(np.asarray(lam, dtype=float))]))
    return np.clip(np.log(np.maximum(gaps, 1e-300)), ETA_BOUNDS[0] + 1e-9, ETA_BOUNDS[1] - 1e-9)


def _greedy_start(t, y, velocity, alpha, n, grid=LAMBDA_GRID):
    """Pick ``n`` eigenvalues from ``grid`` one at a time (orthogonal matching on a dictionary)."""
    D = _columns(alpha, grid, t, velocity)
    G = grid.size
    chosen = []
    for _ in range(n):
        best = (np.inf, None)
        for g in range(G):
            if g in chosen:
                continue
            idx = chosen + [g]
            cols = idx + [G + i for i in idx] if velocity else idx
            A = D[:, cols]
            c = np.linalg.lstsq(A, y, rcond=None)[0]
            r = float(np.linalg.norm(y - A @ c))
            if r < best[0]:
                best = (r, g)
        chosen.append(best[1])
    return np.sort(grid[chosen])


def _starts(t, y, velocity, alpha, n):
    base = (np.arange(n) * np.pi) ** 2
    return [base + c for c in START_SHIFTS] + [_greedy_start(t, y, velocity, alpha, n)]


def _fit_fixed_alpha(t, y, velocity, alpha, lam0, max_nfev=200):
    """Eigenvalue-only fit at a fixed order; returns ``(residual, lambdas)``."""
    proj = _Projection(t, y, velocity, alpha=alpha)
    eta0 = _to_eta(lam0)
    bounds = (np.full(eta0.size, ETA_BOUNDS[0]), np.full(eta0.size, ETA_BOUNDS[1]))
    sol = least_squares(proj.residual, eta0, jac=proj.jacobian, bounds=bounds, method="trf", xtol=1e-15,
                        ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    return float(np.linalg.norm(sol.fun)), proj.unpack(sol.x)[1]


def _best_fixed_alpha(t, y, velocity, alpha, n, extra=(), max_nfev=200):
    best = (np.inf, None)
    for lam0 in list(extra) + _starts(t, y, velocity, alpha, n):
        cand = _fit_fixed_alpha(t, y, velocity, alpha, lam0, max_nfev)
        if cand[0] < best[0]:
            best = cand
    return best


def _fit_joint(t, y, velocity, alpha0, lam0, bounds):
    proj = _Projection(t, y, velocity)
    eta0 = _to_eta(lam0)
    x0 = np.concatenate([[np.clip(alpha0, *bounds)], eta0])
    lo = np.concatenate([[bounds[0]], np.full(eta0.size, ETA_BOUNDS[0])])
    hi = np.concatenate([[bounds[1]], np.full(eta0.size, ETA_BOUNDS[1])])
    sol = least_squares(proj.residual, x0, jac=proj.jacobian, bounds=(lo, hi), method="trf", x_scale="jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=400)
    return sol, proj


def _branches(alpha_bounds):
    lo, hi = alpha_bounds
    out = []
    if lo < 1.0:
        out.append(((lo, min(hi, 1.0)), False))
    if hi > 1.0:
        out.append(((max(lo, 1.0), hi), True))
    return out


def _subsample(t, y, m=COARSE_SAMPLES):
    step = max(1, t.size // m)
    return t[::step], y[::step]


def fit_order_and_modes(trace, n, alpha_bounds=(0.05, 1.95), alpha_step=ALPHA_STEP, residual_tol=RESIDUAL_TOL,
                        side="left", refine=3):
    """Fit ``(alpha, lambda_1..lambda_n)`` and the amplitudes to one end of ``trace``.

    Every order on a grid with spacing ``alpha_step`` is fitted over the
    eigenvalues alone, from several starting spectra and on a subsample of
    the trace; the ``refine`` best orders are then refined jointly in
    ``(alpha, lambda)`` on the full trace. Orders up to 1 use the
    ``E_{a,1}`` columns only, orders above 1 add the ``t E_{a,2}`` columns.

    The fit fails (``ok`` false) when the trace vanishes or the relative
    residual exceeds ``residual_tol``.
    """
    n = int(n)
    if not 1 <= n <= MAX_FIT_MODES:
        raise UsageError(f"number of fitted modes must lie in 1..{MAX_FIT_MODES}, got {n}")
    lo, hi = alpha_bounds
    if not 0.0 < lo < hi < 2.0:
        raise UsageError(f"alpha bounds must satisfy 0 < lo < hi < 2, got {alpha_bounds}")
    t = trace.times
    y = getattr(trace, side)
    if t.size < 2 * (2 * n + 1):
        raise UsageError(f"{t.size} samples cannot determine {n} modes")
    if not np.any(y != 0.0):
        return SpectralFingerprint(np.nan, (np.arange(n) * np.pi) ** 2 + 1.0, np.zeros(n), None, 0.0, ok=False,
                                   message="trace vanishes: every mode amplitude is zero")
    ts, ys = _subsample(t, y)
    best = None
    for bounds, velocity in _branches(alpha_bounds):
        grid = np.arange(bounds[0], bounds[1] + 1e-12, alpha_step)
        if grid.size == 0 or grid[-1] < bounds[1] - 1e-12:
            grid = np.append(grid, bounds[1])
        coarse = []
        for a in grid:
            res, lam = _best_fixed_alpha(ts, ys, velocity, a, n, max_nfev=25)
            coarse.append((res, a, lam))
        coarse.sort(key=lambda s: s[0])
        for res, a, lam in coarse[:refine]:
            sol, proj = _fit_joint(t, y, velocity, a, lam, bounds)
            cost = float(np.linalg.norm(sol.fun))
            if best is None or cost < best[0] * (1.0 - 1e-9):
                best = (cost, sol, proj, velocity)
    cost, sol, proj, velocity = best
    alpha, lam = proj.unpack(sol.x)
    c = proj.amplitudes(sol.x)
    pn = c[:n]
    pn0 = c[n:] if velocity else None
    cond = proj.condition(sol.x)
    if cond > COND_LIMIT:
        warnings.warn(f"amplitude matrix condition number {cond:.2g}: eigenvalues nearly coincide",
                      ConditioningWarning, stacklevel=2)
    ok = cost <= residual_tol
    msg = "" if ok else f"relative residual {cost:.3g} exceeds {residual_tol:.3g}"
    return SpectralFingerprint(float(alpha), lam, pn, pn0, cost, ok, msg, _stderr(sol, lam), cond)


def _stderr(sol, lam):
    """Linearized standard errors of ``(alpha, lambda_1, ...)``."""
    J = sol.jac
    m, p = J.shape
    s2 = float(sol.fun @ sol.fun) / max(m - p, 1)
    try:
        cov = np.linalg.inv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        return None
    # from (alpha, eta) to (alpha, lambda): d lambda_k / d eta_j = exp(eta_j) for j <= k
    n = lam.size
    T = np.eye(n + 1)
    T[1:, 1:] = np.tril(np.ones((n, n))) * np.exp(sol.x[1:])[None, :]
    return np.sqrt(np.abs(np.diag(T @ cov @ T.T)))


def order_profile(trace, n, betas, lam_start=None, side="left"):
    """Residual of the eigenvalue-only fit at each trial order in ``betas``.

    Every order is fitted from the standard starting spectra (and
    ``lam_start`` when given); a forward and a backward sweep then retry each
    order from its neighbours' optima and keep any improvement.
    Returns ``(residuals, lambdas)``.
    """
    t = trace.times
    y = getattr(trace, side)
    betas = np.asarray(betas, dtype=float)
    extra = () if lam_start is None else (np.asarray(lam_start, dtype=float),)
    fits = [_best_fixed_alpha(t, y, b > 1.0, b, n, extra) for b in betas]
    for sweep in (range(1, betas.size), range(betas.size - 2, -1, -1)):
        for i in sweep:
            nb = i - 1 if sweep.step > 0 else i + 1
            cand = _fit_fixed_alpha(t, y, betas[i] > 1.0, betas[i], fits[nb][1])
            if cand[0] < fits[i][0]:
                fits[i] = cand
    return np.array([f[0] for f in fits]), np.array([f[1] for f in fits])

# }}}

# {{{ Laplace-domain cross-check

def laplace_trace(trace, xi, alpha, fingerprint=None, side="left", tail_tol=1e-3):
    r"""``z^(1-alpha) int_0^inf e^(-z t) u(t) dt`` at ``z = xi^(1/alpha)``.

    For data of the form ``sum p_n E_{a,1}(-lambda_n t^a)`` this equals the
    rational function ``sum p_n / (xi + lambda_n)``. The samples are
    integrated as a cubic spline, the stretch before the first sample is
    taken as constant and the stretch after the last one from
    ``fingerprint.model`` when given; otherwise it is dropped, with a
    :class:`BiasWarning` if the trace has not decayed below ``tail_tol``
    of its peak.
    """
    t = trace.times
    y = np.asarray(getattr(trace, side), dtype=float)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if np.any(xi <= 0.0):
        raise UsageError("xi must be positive")
    if not np.any(y != 0.0):
        return np.zeros_like(xi)
    z = xi ** (1.0 / alpha)
    spline = CubicSpline(t, y)
    g, gw = np.polynomial.legendre.leggauss(8)
    # Gauss points on every sample interval
    a, b = t[:-1, None], t[1:, None]
    tq = (0.5 * (b - a) * (g + 1.0) + a).ravel()
    wq = (0.5 * (b - a) * gw).ravel()
    yq = spline(tq)
    body = np.exp(-np.outer(z, tq)) @ (wq * yq)
    head = y[0] * -np.expm1(-z * t[0]) / z
    T = t[-1]
    if fingerprint is not None:
        # Gauss-Laguerre in tau = z (t - T)
        lx, lw = np.polynomial.laguerre.laggauss(40)
        tail = np.array([np.exp(-zk * T) / zk * (lw @ fingerprint.model(T + lx / zk)) for zk in z])
    else:
        tail = 0.0
        if abs(y[-1]) > tail_tol * np.max(np.abs(y)):
            warnings.warn(f"trace has not decayed by t = {T:.3g} ({abs(y[-1]):.3g} of peak "
                          f"{np.max(np.abs(y)):.3g}); the truncated transform is biased", BiasWarning, stacklevel=2)
    return z ** (1.0 - alpha) * (head + body + tail)


def rational_poles(xi, values, n, iters=30):
    """Poles and residues of ``sum r_k / (xi + lambda_k)`` fitted to samples.

    Sanathanan-Koerner iteration on ``P/Q`` with ``deg P = n - 1`` and monic
    ``deg Q = n`` in a scaled variable. Returns ``(lambdas, residues)``
    sorted by ``lambda``.
    """
    xi = np.asarray(xi, dtype=float)
    f = np.asarray(values, dtype=float)
    s = xi.max()
    x = xi / s
    Vq = np.vander(x, n + 1, increasing=True)
    w = np.ones_like(x)
    for _ in range(iters):
        # f Q - P = 0 with Q = x^n + sum_{k<n} q_k x^k
        A = np.hstack([(f / w)[:, None] * Vq[:, :n], -Vq[:, :n] / w[:, None]])
        rhs = -(f / w) * Vq[:, n]
        sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
        q = np.append(sol[:n], 1.0)
        w_new = np.abs(Vq @ q)
        if np.allclose(w_new, w, rtol=1e-13, atol=0.0):
            break
        w = w_new
    p = sol[n:]
    roots = np.roots(q[::-1])
    lam = -roots.real * s
    dq = np.polynomial.polynomial.polyder(q)
    # residues in x = xi / s scale by s back in xi
    res = s * (np.polynomial.polynomial.polyval(roots, p) / np.polynomial.polynomial.polyval(roots, dq)).real
    order = np.argsort(lam)
    return lam[order], res[order]

# }}}


# {{{ operator recovery

def endpoint_ratios(fingerprint, trace, side="right"):
    """``phi_n(1)`` as the ratio of right to left amplitudes at the fitted exponents."""
    fp = fingerprint
    A = _columns(fp.alpha, fp.lambdas, trace.times, fp.velocity)
    c = np.linalg.lstsq(A, getattr(trace, side), rcond=None)[0]
    n = fp.n
    if not fp.velocity:
        return c / fp.pn
    left = np.vstack([fp.pn, fp.pn0])
    right = np.vstack([c[:n], c[n:]])
    return np.sum(left * right, axis=0) / np.sum(left * left, axis=0)


def basis_functions(kind, dim):
    """Smooth basis for the potential: ``"bump"`` Gaussians or ``"cosine"`` modes."""
    dim = int(dim)
    if dim < 1:
        raise UsageError("basis dimension must be positive")
    if kind == "bump":
        centres = (np.arange(dim) + 0.5) / dim
        width = 1.0 / (2.0 * dim)
        return [lambda x, c=c: np.exp(-0.5 * ((x - c) / width) ** 2) for c in centres]
    if kind == "cosine":
        return [lambda x, k=k: np.cos(k * np.pi * x) for k in range(dim)]
    raise UsageError(f"unknown basis {kind!r}")


def potential_from_coeffs(coeffs, kind="bump", m=64, allow_negative=True):
    """``p = sum c_k b_k`` sampled on ``m + 1`` nodes."""
    basis = basis_functions(kind, len(coeffs))
    x = np.linspace(0.0, 1.0, m + 1)
    return Potential(sum(c * b(x) for c, b in zip(coeffs, basis)), allow_negative=allow_negative)


class OperatorFit(NamedTuple):
    """Recovered potential and Robin pair with the fit diagnostics."""

    potential: Potential
    robin: RobinPair
    coeffs: np.ndarray
    misfit: float
    iterations: int
    converged: bool
    message: str


def _spectral_misfit(x, kind, dim, n, mesh, lam_fit, ratios):
    p = potential_from_coeffs(x[:dim], kind)
    robin = RobinPair(float(np.exp(x[dim])), float(np.exp(x[dim + 1])))
    sp = eigensystem(p, robin, n, mesh=mesh)
    return np.concatenate([(sp.lambdas - lam_fit) / lam_fit, sp.phi1 - ratios])


def recover_operator(fingerprint, trace_right, basis_dim, basis="bump", mesh=None, start=None, misfit_tol=1e-10,
                     max_nfev=200):
    """Match eigenvalues and ``phi_n(1)`` with a potential in a ``basis_dim`` basis plus ``(h, H)``.

    ``start`` is ``(coeffs, h, H)``; the default is ``p = 0`` and ``h = H = 1``.
    A start whose misfit is already below ``misfit_tol`` is returned with zero
    iterations.
    """
    fp = fingerprint
    n = fp.n
    dim = int(basis_dim)
    if n < dim + 2:
        raise UsageError(f"{n} fitted modes cannot determine {dim} potential coefficients and (h, H)")
    mesh = mesh or Mesh()
    ratios = endpoint_ratios(fp, trace_right)
    coeffs0, h0, H0 = (np.zeros(dim), 1.0, 1.0) if start is None else start
    x0 = np.concatenate([np.asarray(coeffs0, dtype=float), [np.log(h0), np.log(H0)]])
    fun = lambda x: _spectral_misfit(x, basis, dim, n, mesh, fp.lambdas, ratios)  # noqa: E731
    r0 = fun(x0)
    if np.linalg.norm(r0) <= misfit_tol:
        x, misfit, nit, ok, msg = x0, float(np.linalg.norm(r0)), 0, True, "start satisfies the data"
    else:
        sol = least_squares(fun, x0, method="trf", x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-14,
                            max_nfev=max_nfev)
        x, misfit, nit = sol.x, float(np.linalg.norm(sol.fun)), int(sol.nfev)
        ok = sol.status > 0
        msg = sol.message if ok else f"optimizer stopped: {sol.message}"
    p = potential_from_coeffs(x[:dim], basis)
    robin = RobinPair(float(np.exp(x[dim])), float(np.exp(x[dim + 1])))
    return OperatorFit(p, robin, x[:dim].copy(), misfit, nit, ok, msg)


def recover_initial(fingerprint, spec):
    """``a = sum p_n phi_n`` (and ``a0`` from ``p_n^0``) on the spectrum's mesh."""
    fp = fingerprint
    if not np.all(np.isfinite(fp.pn)):
        raise UsageError("fingerprint amplitudes must be finite")
    if spec.n < fp.n:
        raise UsageError(f"spectrum has {spec.n} modes, fingerprint {fp.n}")
    return InitialData.from_modes(spec, fp.pn, fp.pn0)

# }}}


# {{{ source problem: deconvolution

DISCREPANCY_SAFETY = 1.2
HEAD_NODES = 24


def _frac_weights(s, gamma_):
    """Matrix ``W`` with ``(W f)_i = I^gamma[f](s_i)`` for ``f`` piecewise linear on the nodes ``s``.

    Row 0 (``s_0 = 0``) is zero. Exact integration of the product with
    ``(t - s)^(gamma - 1) / Gamma(gamma)`` on every panel.
    """
    m = s.size
    W = np.zeros((m, m))
    for i in range(1, m):
        A = s[i] - s[:i]
        B = s[i] - s[1:i + 1]
        h = A - B
        I0 = (A**gamma_ - B**gamma_) / gamma_
        I1 = (A ** (gamma_ + 1.0) - B ** (gamma_ + 1.0)) / (gamma_ + 1.0)
        up = (A * I0 - I1) / h
        W[i, :i] += I0 - up
        W[i, 1:i + 1] += up
    return W / gamma(gamma_)


def _conv_weights(s, kern, order=4):
    """Matrix of ``int_0^{s_i} kern(s_i - r) f(r) dr`` for piecewise linear ``f`` (Gauss-Legendre per panel)."""
    g, gw = np.polynomial.legendre.leggauss(order)
    g = 0.5 * (g + 1.0)
    m = s.size
    C = np.zeros((m, m))
    a, b = s[:-1], s[1:]
    h = b - a
    for i in range(1, m):
        r = a[:i, None] + h[:i, None] * g[None, :]
        kv = kern(s[i] - r) * (h[:i, None] * gw[None, :] * 0.5)
        C[i, :i] += kv @ (1.0 - g)
        C[i, 1:i + 1] += kv @ g
    return C


def _theta_callables(theta):
    """``(theta, dtheta)`` from a callable pair, a callable, or ``(times, values)`` samples."""
    if isinstance(theta, tuple) and len(theta) == 2 and not callable(theta[0]):
        spline = CubicSpline(np.asarray(theta[0], dtype=float), np.asarray(theta[1], dtype=float))
        return spline, spline.derivative()
    if isinstance(theta, tuple):
        return theta
    if hasattr(theta, "theta") and hasattr(theta, "dtheta"):
        return theta.theta, theta.dtheta
    if callable(theta):
        d = 1e-6
        return theta, lambda t: (theta(t + d) - theta(np.maximum(t - d, 0.0))) / (t + d - np.maximum(t - d, 0.0))
    raise UsageError("theta must be a callable, a (theta, dtheta) pair, or (times, values) samples")


def source_operator(times, theta, alpha):
    """Matrix ``C`` mapping ``u`` at ``(0, times)`` to the source trace at ``times``.

    ``C u = I^g [theta(0) u + theta' * u]`` with ``g = alpha`` for
    ``alpha <= 1`` and ``g = alpha - 1`` above (where ``u`` is the trace of the
    solution with zero displacement and velocity ``g``).
    """
    th, dth = _theta_callables(theta)
    s = np.concatenate([[0.0], np.asarray(times, dtype=float)])
    g = alpha if alpha <= 1.0 else alpha - 1.0
    V = float(th(0.0)) * np.eye(s.size) + _conv_weights(s, dth)
    W = _frac_weights(s, g) if g != 1.0 else _frac_weights(s, 1.0)
    return (W @ V)[1:]


def _second_difference(m):
    L = np.zeros((m - 2, m))
    i = np.arange(m - 2)
    L[i, i], L[i, i + 1], L[i, i + 2] = 1.0, -2.0, 1.0
    return L


def _tikhonov(C, L, y, target):
    """Largest ``mu`` with ``|C u - y| <= target``; returns ``(u, mu, residual)``."""
    scale = np.linalg.norm(C, 2) ** 2 / max(np.linalg.norm(L, 2) ** 2, 1e-300)

    def solve(mu):
        A = np.vstack([C, np.sqrt(mu * scale) * L])
        u = np.linalg.lstsq(A, np.concatenate([y, np.zeros(L.shape[0])]), rcond=None)[0]
        return u, float(np.linalg.norm(C @ u - y))

    lo, hi = -18.0, 2.0
    u, r = solve(10.0**lo)
    if r > target:
        return u, 10.0**lo, r
    best = (u, 10.0**lo, r)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        u, r = solve(10.0**mid)
        if r <= target:
            lo, best = mid, (u, 10.0**mid, r)
        else:
            hi = mid
        if hi - lo < 0.05:
            break
    return best


def _onset(t, y, alpha, head, k=6):
    """Extrapolate the trace into ``(0, t_1)`` with ``c1 t^alpha + c2 t^b``, ``b = min(2 alpha, alpha + 1)``."""
    b = min(2.0 * alpha, alpha + 1.0)
    s = t[:k] / t[0]
    c = np.linalg.lstsq(np.column_stack([s**alpha, s**b]), y[:k], rcond=None)[0]
    r = head / t[0]
    return c[0] * r**alpha + c[1] * r**b


def deconvolve_source(trace_source, theta, alpha, noise_level=0.0):
    """Recover the initial-value traces ``u(l, t)`` from a source-driven trace.

    Solves ``I^g[theta(0) u + theta' * u] = m`` (see :func:`source_operator`)
    on the trace times by product integration with a second-difference
    Tikhonov term. The parameter is the largest one whose residual stays
    within ``1.2`` times the noise norm ``noise_level * max|m| * sqrt(len)``.
    """
    th, dth = _theta_callables(theta)
    t = trace_source.times
    th0 = float(th(0.0))
    thmax = float(np.max(np.abs(th(np.linspace(0.0, t[-1], 257)))))
    if thmax == 0.0:
        raise UsageError("theta must not vanish identically")
    if abs(th0) <= 1e-12 * thmax:
        warnings.warn("theta(0) = 0: the convolution equation is severely ill-posed", IllPosednessWarning,
                      stacklevel=2)
    # the trace is unobserved on (0, t_1); its onset there is ~ t^alpha in both branches
    head = t[0] * 2.0 ** -np.arange(HEAD_NODES, 0, -1)
    tt = np.concatenate([head, t])
    C = source_operator(tt, (th, dth), alpha)
    L = _second_difference(tt.size + 1)
    out = []
    for y in (trace_source.left, trace_source.right):
        if not np.any(y != 0.0):
            out.append(np.zeros(t.size))
            continue
        y = np.concatenate([_onset(t, y, alpha, head), y])
        floor = 1e-13 * np.linalg.norm(y)
        target = DISCREPANCY_SAFETY * max(noise_level * np.max(np.abs(y)) * np.sqrt(y.size), floor)
        u, mu, r = _tikhonov(C, L, y, target)
        if noise_level > 0.0 and r > 10.0 * target:
            raise NumericalError(f"regularization failed: residual {r:.3g} above the noise target {target:.3g}")
        out.append(u[1 + HEAD_NODES:])
    return BoundaryTrace(t, out[0], out[1], meta={"deconvolved": True, "alpha": alpha})

# }}}


# {{{ distinguishability and the mode union

def synthesize(params, data, n_modes, t_grid):
    """Boundary traces of ``params`` with initial data ``data`` (on ``data.mesh``)."""
    spec = eigensystem(params.potential, params.robin, n_modes, mesh=data.mesh)
    coeffs = mode_coefficients(data, spec)
    return boundary_trace(params, data, spec, coeffs, t_grid)


def distinguishability(params_a, data_a, params_b, data_b, T, t_count, n_modes=20, t_min=None):
    """Largest sup-norm gap between the two tuples' traces over both ends on a log grid in ``[t_min, T]``."""
    t_min = 1e-3 * T if t_min is None else t_min
    t = np.geomspace(t_min, T, int(t_count))
    ta = synthesize(params_a, data_a, n_modes, t)
    tb = synthesize(params_b, data_b, n_modes, t)
    return float(np.max(np.abs(ta.stacked() - tb.stacked())))


def assumption_union_check(coeff_sets, n, tol):
    """True iff every mode ``k <= n`` is excited above ``tol`` by at least one coefficient set."""
    if len(coeff_sets) == 0:
        raise UsageError("need at least one coefficient set")
    missing = set(range(1, n + 1))
    for c in coeff_sets:
        missing &= set(assumption_check(c, n, tol))
    return not missing

# }}}


# {{{ full pipeline

@dataclass(frozen=True, eq=False)
class RecoveryResult:
    """Recovered model, initial data and fingerprint, with errors against a known truth."""

    params: ModelParams | None
    initial: InitialData | None
    fingerprint: SpectralFingerprint
    operator: OperatorFit | None
    resynthesis: float
    errors: dict

    @property
    def ok(self):
        return self.fingerprint.ok and self.params is not None


def recover(trace, n, basis_dim, basis="bump", mesh=None, alpha_bounds=(0.05, 1.95), residual_tol=RESIDUAL_TOL,
            truth=None):
    """Fit the left trace, recover the operator from both ends and rebuild the initial data.

    ``truth`` is an optional ``(params, data)`` pair on ``mesh``; when given,
    ``errors`` holds the deviations of every recovered quantity.
    """
    mesh = mesh or Mesh()
    fp = fit_order_and_modes(trace, n, alpha_bounds=alpha_bounds, residual_tol=residual_tol)
    if not fp.ok:
        return RecoveryResult(None, None, fp, None, np.inf, {})
    op = recover_operator(fp, trace, basis_dim, basis=basis, mesh=mesh)
    params = ModelParams(fp.alpha, op.potential, op.robin)
    spec = eigensystem(op.potential, op.robin, n, mesh=mesh)
    initial = recover_initial(fp, spec)
    re = boundary_trace(params, initial, spec, fp.coefficients(), trace.times)
    resynth = float(np.max(np.abs(re.stacked() - trace.stacked())) / np.max(np.abs(trace.stacked())))
    errors = {}
    if truth is not None:
        errors = recovery_errors(params, initial, fp, spec, *truth)
    return RecoveryResult(params, initial, fp, op, resynth, errors)


def recovery_errors(params, initial, fp, spec, true_params, true_data, x_count=201):
    """Deviations of a recovered tuple from the truth (eigenvalues relative, functions in max norm)."""
    true_spec = eigensystem(true_params.potential, true_params.robin, fp.n, mesh=true_data.mesh)
    coeffs = mode_coefficients(true_data, true_spec)
    x = np.linspace(0.0, 1.0, x_count)
    err = {
        "alpha": abs(params.alpha - true_params.alpha),
        "lambda_rel": float(np.max(np.abs(fp.lambdas / true_spec.lambdas - 1.0))),
        "h": abs(params.robin.h - true_params.robin.h),
        "H": abs(params.robin.H - true_params.robin.H),
        "p": float(np.max(np.abs(params.potential(x) - true_params.potential(x)))),
        "a": float(np.max(np.abs(initial.a - true_data.a))),
        "pn_rel": float(np.max(np.abs(fp.pn - coeffs.pn)) / np.max(np.abs(coeffs.pn))),
    }
    if fp.pn0 is not None and coeffs.pn0 is not None:
        err["pn0_rel"] = float(np.max(np.abs(fp.pn0 - coeffs.pn0)) / np.max(np.abs(coeffs.pn0)))
        err["a0"] = float(np.max(np.abs(initial.a0 - true_data.a0)))
    return err

# }}}
