r"""Two-parameter Mittag-Leffler function on the real axis.

.. math::

    E_{\alpha,\beta}(z) = \sum_{k=0}^\infty \frac{z^k}{\Gamma(\alpha k + \beta)}

Three evaluation regimes are combined, selected per argument:

* ``series``: the power series with compensated summation, used for
  :math:`|z|^{1/\alpha} \le` :data:`SERIES_RADIUS` and for all positive ``z``;
* ``contour``: inversion of the Laplace transform
  :math:`s^{\alpha-\beta}/(s^\alpha - z)` on an optimal parabolic contour
  (Garrappa, SIAM J. Numer. Anal. 53, 2015) with pole residues added;
* ``asymptotic``: the algebraic expansion
  :math:`-\sum_k z^{-k}/\Gamma(\beta-\alpha k)` plus the exponential residue
  terms (present for :math:`\alpha > 1`), used once
  :math:`|z|^{1/\alpha} \ge` :data:`ASYMPTOTIC_RADIUS` where the neglected
  remainder is below double precision.

Everything is vectorized over ``z``; functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, rgamma

from .errors import DomainError, EvaluationError

#: series regime bound on ``|z|**(1/alpha)`` (cancellation below ~e**2.5)
SERIES_RADIUS = 2.5
#: asymptotic regime bound on ``|z|**(1/alpha)``
ASYMPTOTIC_RADIUS = 38.0
#: largest positive argument accepted
Z_MAX = 5.0

_LOG_TOL = np.log(1e-15)
_LOG_MACHEPS = np.log(np.finfo(float).eps)
_CHUNK = 4096


@dataclass(frozen=True)
class MlParams:
    """Order ``alpha`` in (0, 2] and parameter ``beta`` > 0."""

    alpha: float
    beta: float

    def __post_init__(self):
        check_params(self.alpha, self.beta)


def check_params(alpha, beta):
    if not (np.isfinite(alpha) and 0.0 < alpha <= 2.0):
        raise DomainError(f"alpha must lie in (0,2), got {alpha!r} (alpha = 2 only as the wave limit)")
    if not (np.isfinite(beta) and beta > 0.0):
        raise DomainError(f"beta must be positive, got {beta!r}")


def regime_bounds(alpha):
    """Return ``(r0, r1)``: series for ``|z| <= r0``, asymptotics for ``|z| >= r1``."""
    return SERIES_RADIUS**alpha, ASYMPTOTIC_RADIUS**alpha


def ml(alpha, beta, z):
    """Evaluate :math:`E_{\\alpha,\\beta}(z)` for real ``z <= Z_MAX``.

    ``z`` may be a scalar or an array; the result has the same shape.
    """
    check_params(alpha, beta)
    z_arr = np.asarray(z, dtype=float)
    scalar = z_arr.ndim == 0
    z_arr = np.atleast_1d(z_arr)
    if not np.all(np.isfinite(z_arr)):
        raise DomainError("Mittag-Leffler argument must be finite")
    if np.any(z_arr > Z_MAX):
        raise DomainError(f"Mittag-Leffler argument must be <= {Z_MAX}")

    closed = _closed_form(alpha, beta, z_arr)
    if closed is not None:
        out = closed
    else:
        out = np.empty_like(z_arr)
        r0, r1 = regime_bounds(alpha)
        mag = np.abs(z_arr)
        use_series = (z_arr >= 0.0) | (mag <= r0)
        use_asym = ~use_series & (mag >= r1)
        use_contour = ~use_series & ~use_asym
        if use_series.any():
            out[use_series] = ml_series(alpha, beta, z_arr[use_series])
        if use_asym.any():
            out[use_asym] = ml_asymptotic(alpha, beta, z_arr[use_asym])
        if use_contour.any():
            out[use_contour] = ml_contour(alpha, beta, z_arr[use_contour])
    if not np.all(np.isfinite(out)):
        raise EvaluationError("non-finite Mittag-Leffler value", regime="mixed")
    return out[0] if scalar else out.reshape(np.shape(z))


def _closed_form(alpha, beta, z):
    if alpha == 1.0 and beta == 1.0:
        return np.exp(z)
    if alpha == 1.0 and beta == 2.0:
        out = np.ones_like(z)
        nz = z != 0.0
        out[nz] = np.expm1(z[nz]) / z[nz]
        return out
    if alpha == 2.0 and beta in (1.0, 2.0) and np.all(z <= 0.0):
        w = np.sqrt(-z)
        if beta == 1.0:
            return np.cos(w)
        return np.sinc(w / np.pi)
    return None


# {{{ series

def ml_series(alpha, beta, z, max_terms=20000):
    """Power series with Kahan summation and term-ratio stopping."""
    z = np.asarray(z, dtype=float)
    total = np.full(z.shape, rgamma(beta))
    comp = np.zeros_like(total)
    with np.errstate(divide="ignore"):
        logz = np.log(np.abs(z))
    neg = z < 0.0
    peak = float(np.max(np.abs(z) ** (1.0 / alpha) / alpha)) + 2.0
    for k in range(1, max_terms):
        term = np.exp(k * logz - gammaln(alpha * k + beta))
        if k % 2:
            term[neg] = -term[neg]
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if k > peak and np.all(np.abs(term) <= 1e-17 * np.maximum(np.abs(total), 1e-300)):
            return total
    raise EvaluationError(f"power series did not converge in {max_terms} terms", regime="series")


# }}}

# {{{ asymptotic expansion

def _pole_residues(alpha, beta, z):
    """Sum of residues of ``e^s s^(alpha-beta)/(s^alpha - z)`` on the principal sheet, ``z < 0``."""
    r = np.abs(z) ** (1.0 / alpha)
    if alpha > 1.0:
        s = r * np.exp(1j * np.pi / alpha)
        return (2.0 / alpha) * np.real(s ** (1.0 - beta) * np.exp(s))
    # alpha == 1: the pole sits on the cut and contributes O(e^z), below eps here
    return np.zeros_like(r)


def ml_asymptotic(alpha, beta, z, max_terms=80):
    """Large-argument expansion for ``z < 0`` with optimal truncation."""
    z = np.asarray(z, dtype=float)
    if np.any(z >= 0.0):
        raise EvaluationError("asymptotic expansion needs negative arguments", regime="asymptotic")
    k = np.arange(1, max_terms + 1)
    # terms decrease while alpha*k < |z|**(1/alpha)
    kstop = np.clip(np.floor(np.abs(z) ** (1.0 / alpha) / alpha), 1, max_terms)
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        coef = rgamma(beta - alpha * k)
        terms = np.exp(-np.outer(np.log(np.abs(z)), k)) * (-1.0) ** k * coef
    terms[k[None, :] > kstop[:, None]] = 0.0
    terms = np.nan_to_num(terms, nan=0.0, posinf=0.0, neginf=0.0)
    return _pole_residues(alpha, beta, z) - terms.sum(axis=1)


# }}}

# {{{ optimal parabolic contour

def _param_unbounded(phi, p, log_eps):
    """Contour parameters for a region right of the singularity with phase ``phi``.

    ``phi`` is an array; ``p`` a scalar order of the singularity. Returns
    ``(mu, h, N)`` arrays, ``N = inf`` where no admissible contour exists.
    """
    phi = np.asarray(phi, dtype=float)
    sq_phi = np.sqrt(phi)
    phibar = np.where(phi > 0.0, phi * 1.01, 0.01)
    sq_phibar = np.sqrt(phibar)
    f_min, f_max, f_tar = 1.0, 10.0, 5.0
    done = np.zeros(phi.shape, dtype=bool)
    N = np.zeros_like(phi)
    A = np.zeros_like(phi)
    sq_mu = np.zeros_like(phi)
    for _ in range(200):
        phi_t = phibar
        le = log_eps / phi_t
        N_new = np.ceil(phi_t / np.pi * (1.0 - 1.5 * le + np.sqrt(1.0 - 2.0 * le)))
        A_new = np.pi * N_new / phi_t
        sq_mu_new = sq_phibar * np.abs(4.0 - A_new) / np.abs(7.0 - np.sqrt(1.0 + 12.0 * A_new))
        todo = ~done
        N[todo], A[todo], sq_mu[todo] = N_new[todo], A_new[todo], sq_mu_new[todo]
        if p < 1e-14:
            break
        with np.errstate(divide="ignore"):
            fbar = ((sq_phibar - sq_phi) / sq_mu) ** (-p)
        ok = (f_min < fbar) & (fbar < f_max)
        done |= ok
        if done.all():
            break
        sq_phibar = np.where(done, sq_phibar, f_tar ** (-1.0 / p) * sq_mu + sq_phi)
        phibar = sq_phibar**2
    mu = sq_mu**2
    h = (-3.0 * A - 2.0 + 2.0 * np.sqrt(1.0 + 12.0 * A)) / (4.0 - A) / N

    threshold = log_eps - _LOG_MACHEPS
    big = mu > threshold
    if big.any():
        Q = 0.0 if abs(p) < 1e-14 else f_tar ** (-1.0 / p) * np.sqrt(mu)
        phib = (Q + sq_phi) ** 2
        w = np.sqrt(_LOG_MACHEPS / (_LOG_MACHEPS - log_eps))
        u = np.sqrt(-phib / _LOG_MACHEPS)
        fix = big & (phib < threshold)
        N_fix = np.ceil(w * log_eps / 2.0 / np.pi / (u * w - 1.0))
        mu = np.where(fix, threshold, mu)
        N = np.where(fix, N_fix, np.where(big, np.inf, N))
        h = np.where(fix, w / N_fix, np.where(big, 0.0, h))
    return mu, h, N


def _param_bounded(phi_j, phi_j1, p, q, log_eps):
    """Contour parameters for the region between two singularities (``p == 0`` case
    handled as well as ``p > 0``; ``q > 0`` required)."""
    phi_j = np.asarray(phi_j, dtype=float)
    phi_j1 = np.asarray(phi_j1, dtype=float)
    fac = 1.01
    f_max = np.exp(log_eps - _LOG_MACHEPS)
    sq_j = np.sqrt(phi_j)
    threshold = 2.0 * np.sqrt(log_eps - _LOG_MACHEPS)
    sq_j1 = np.minimum(np.sqrt(phi_j1), threshold - sq_j)
    if p < 1e-14:
        with np.errstate(divide="ignore", invalid="ignore"):
            f_min = np.where(sq_j > 0.0, fac * (sq_j / (sq_j1 - sq_j)) ** q, fac)
        adm = f_min < f_max
        f_bar = f_min + f_min / f_max * (f_max - f_min)
        fq = f_bar ** (-1.0 / q)
        sq_bar_j = sq_j
        sq_bar_j1 = (2.0 * sq_j1 - fq * sq_j) / (2.0 + fq)
    else:
        f_min = fac * (sq_j + sq_j1) / (sq_j1 - sq_j) ** max(p, q)
        adm = f_min < f_max
        f_min = np.maximum(f_min, 1.5)
        f_bar = f_min + f_min / f_max * (f_max - f_min)
        fp = f_bar ** (-1.0 / p)
        fq = f_bar ** (-1.0 / q)
        w = -phi_j1 / log_eps
        den = 2.0 + w - (1.0 + w) * fp + fq
        sq_bar_j = ((2.0 + w + fq) * sq_j + fp * sq_j1) / den
        sq_bar_j1 = (-(1.0 + w) * fq * sq_j + (2.0 + w - (1.0 + w) * fp) * sq_j1) / den
    with np.errstate(invalid="ignore", divide="ignore"):
        le = log_eps - np.log(f_bar)
        w = -(sq_bar_j1**2) / le
        mu = (((1.0 + w) * sq_bar_j + sq_bar_j1) / (2.0 + w)) ** 2
        h = -2.0 * np.pi / le * (sq_bar_j1 - sq_bar_j) / ((1.0 + w) * sq_bar_j + sq_bar_j1)
        N = np.ceil(np.sqrt(1.0 - le / mu) / h)
    bad = ~adm | ~np.isfinite(N) | (N <= 0)
    return np.where(bad, 0.0, mu), np.where(bad, 0.0, h), np.where(bad, np.inf, N)


def _contour_params(alpha, beta, z):
    """Choose ``(mu, h, N, with_residues)`` per negative argument."""
    p0 = max(0.0, -2.0 * (alpha - beta + 1.0))
    if alpha <= 1.0:
        log_eps = _LOG_TOL
        for _ in range(8):
            mu, h, N = _param_unbounded(np.zeros(1), p0, log_eps)
            if N[0] <= 200:
                break
            log_eps += np.log(10.0)
        shape = z.shape
        return (np.full(shape, mu[0]), np.full(shape, h[0]), np.full(shape, N[0]),
                np.zeros(shape, dtype=bool))
    # conjugate poles at |z|^(1/alpha) exp(+-i pi/alpha)
    phi = np.abs(z) ** (1.0 / alpha) * (1.0 + np.cos(np.pi / alpha)) / 2.0
    out = [np.zeros_like(phi), np.zeros_like(phi), np.full(phi.shape, np.inf),
           np.zeros(phi.shape, dtype=bool)]
    todo = np.ones(phi.shape, dtype=bool)
    log_eps = _LOG_TOL
    for _ in range(8):
        sub = _contour_params_fixed(alpha, p0, phi[todo], log_eps)
        accept = sub[2] <= 200
        idx = np.flatnonzero(todo)
        for o, s in zip(out, sub):
            o[idx[accept]] = s[accept]
        todo[idx[accept]] = False
        if not todo.any():
            break
        # relax the tolerance where no cheap contour exists
        log_eps += np.log(10.0)
    return tuple(out)


def _contour_params_fixed(alpha, p0, phi, log_eps):
    mu_b, h_b, N_b = _param_bounded(np.zeros_like(phi), phi, p0, 1.0, log_eps)
    mu_u, h_u, N_u = np.zeros_like(phi), np.zeros_like(phi), np.full(phi.shape, np.inf)
    right_ok = phi < log_eps - _LOG_MACHEPS
    if right_ok.any():
        mu_u[right_ok], h_u[right_ok], N_u[right_ok] = _param_unbounded(phi[right_ok], 1.0, log_eps)
    use_b = N_b <= N_u
    return (np.where(use_b, mu_b, mu_u), np.where(use_b, h_b, h_u),
            np.where(use_b, N_b, N_u), use_b)


def ml_contour(alpha, beta, z):
    """Laplace inversion on a parabolic contour, for ``z < 0``."""
    z = np.asarray(z, dtype=float)
    if np.any(z >= 0.0):
        raise EvaluationError("contour scheme implemented for negative arguments", regime="contour")
    if alpha == 2.0:
        # poles on the imaginary axis leave no admissible parabola
        raise EvaluationError("alpha = 2 supported only for beta in {1, 2} at moderate |z|",
                              regime="contour")
    mu, h, N, with_res = _contour_params(alpha, beta, z)
    if not np.all(np.isfinite(N)):
        raise EvaluationError("no admissible integration contour", regime="contour")
    out = np.empty_like(z)
    order = np.argsort(N, kind="stable")
    for start in range(0, z.size, _CHUNK):
        idx = order[start:start + _CHUNK]
        n_max = int(N[idx].max())
        k = np.arange(n_max + 1)
        u = h[idx, None] * k[None, :]
        s = mu[idx, None] * (1.0 + 1j * u) ** 2
        ds = 2.0 * mu[idx, None] * (1j - u)
        with np.errstate(over="ignore", invalid="ignore"):
            S = np.exp(s) * s ** (alpha - beta) / (s**alpha - z[idx, None]) * ds
        S[k[None, :] > N[idx, None]] = 0.0
        S[:, 1:] *= 2.0
        val = h[idx] / (2.0 * np.pi) * np.imag(S.sum(axis=1))
        res = _pole_residues(alpha, beta, z[idx])
        out[idx] = val + np.where(with_res[idx], res, 0.0)
    return out


# }}}

# {{{ time kernels

@dataclass(frozen=True)
class TimeKernelTriple:
    """Kernels of the series solution at one ``(alpha, lambda, t)``.

    ``e1 = E_{a,1}(-lam t^a)``, ``e2t = t E_{a,2}(-lam t^a)`` and
    ``eaconv = t^(a-1) E_{a,a}(-lam t^a)`` (infinite at ``t = 0`` when ``a < 1``).
    """

    e1: np.ndarray
    e2t: np.ndarray
    eaconv: np.ndarray


def time_kernels(alpha, lam, t):
    """Evaluate the three kernels; ``lam`` and ``t`` broadcast together."""
    if not 0.0 < alpha < 2.0:
        raise DomainError(f"alpha must lie in (0,2), got {alpha!r}")
    lam, t = np.broadcast_arrays(np.asarray(lam, dtype=float), np.asarray(t, dtype=float))
    if np.any(lam < 0.0):
        raise DomainError("lambda must be non-negative")
    if np.any(t < 0.0):
        raise DomainError("t must be non-negative")
    z = -lam * t**alpha
    e1 = ml(alpha, 1.0, z)
    e2t = t * ml(alpha, 2.0, z)
    with np.errstate(divide="ignore"):
        tpow = np.where(t > 0.0, t ** (alpha - 1.0), np.inf if alpha < 1.0 else (1.0 if alpha == 1.0 else 0.0))
    eaconv = tpow * ml(alpha, alpha, z)
    return TimeKernelTriple(np.asarray(e1), np.asarray(e2t), np.asarray(eaconv))


# }}}
