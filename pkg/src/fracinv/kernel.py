r"""Transformation kernel between two Robin Sturm-Liouville systems.

``K(x, y)`` on :math:`0 \le y \le x \le 1` solves

.. math::

    K_{xx} - K_{yy} = (q(x) - p(y)) K, \qquad K_y(x, 0) = h K(x, 0),

    K(x, x) = j - h + \tfrac12 \int_0^x (q - p),

and maps ``phi`` (potential ``p``, ``phi'(0) = h``) to ``psi`` (potential
``q``, ``psi'(0) = j``) via ``psi = phi + int_0^x K(x, y) phi(y) dy``.

In characteristic variables the operator becomes ``4 K_{xi eta}``. Integrating
over a diamond of half-width ``d`` gives the marching rule

.. math::

    K_N = K_W + K_E - K_S + \tfrac{d^2}{4}(f_N + f_W + f_E + f_S),
    \qquad f = (q(x) - p(y)) K,

with ``N = (x, y)``, ``W = (x-d, y+d)``, ``E = (x-d, y-d)`` and
``S = (x-2d, y)``. The rule is second order. Two meshes are combined by
Richardson extrapolation, which leaves a third-order remainder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError, NumericalError, UsageError
from .sturm_liouville import Potential


@dataclass(frozen=True, eq=False)
class Kernel:
    """Samples ``values[i, k] = K(x_i, x_k)`` for ``k <= i`` (NaN above the diagonal)."""

    x: np.ndarray
    values: np.ndarray
    p: Potential
    h: float
    q: Potential
    j: float

    @property
    def m(self):
        return self.x.size - 1

    def diagonal(self):
        return np.diag(self.values).copy()

    def row(self, i):
        return self.values[i, : i + 1]

    def triangle(self):
        """Rows ``(x, y, K)`` for every node of the triangle."""
        i, k = np.tril_indices(self.x.size)
        return np.column_stack([self.x[i], self.x[k], self.values[i, k]])


def diagonal_value(p, h, q, j, x):
    """Prescribed ``K(x, x) = j - h + (1/2) int_0^x (q - p)``."""
    x = np.asarray(x, dtype=float)
    return (j - h) + 0.5 * (q.antiderivative(x) - p.antiderivative(x))


def _march(p, h, q, j, n, picard_from=None):
    """One marching sweep on the half lattice with step ``d = 1/n``.

    With ``picard_from`` the reaction term is taken from that array
    (one Picard step); otherwise it is treated implicitly at the new node.
    Returns an ``(n+1, n+1)`` array, valid where ``I + K`` is even and ``K <= I``.
    """
    d = 1.0 / n
    grid = np.arange(n + 1) * d
    qx = q(grid)
    py = p(grid)
    diag = diagonal_value(p, h, q, j, grid)
    K = np.full((n + 1, n + 1), np.nan)
    old = picard_from
    c4 = 0.25 * d * d
    K[0, 0] = diag[0]
    # at the corner: d/dx K(x,x) = (q - p)/2, K_y = h K, K_xx - K_yy = (q - p) K
    k00 = diag[0]
    c0 = qx[0] - py[0]
    dc0 = float(q(0.0, 1) - p(0.0, 1))
    kx = 0.5 * c0 - h * k00
    kxx = 0.5 * (0.5 * dc0 - 2.0 * h * kx + c0 * k00)
    if n >= 1:
        K[1, 1] = diag[1]
    for I in range(2, n + 1):
        ks = np.arange(I - 2, 0, -2)
        if ks.size:
            src = K if old is None else old
            W, E, S = K[I - 1, ks + 1], K[I - 1, ks - 1], K[I - 2, ks]
            fW = (qx[I - 1] - py[ks + 1]) * src[I - 1, ks + 1]
            fE = (qx[I - 1] - py[ks - 1]) * src[I - 1, ks - 1]
            fS = (qx[I - 2] - py[ks]) * src[I - 2, ks]
            cN = qx[I] - py[ks]
            rhs = W + E - S + c4 * (fW + fE + fS)
            if old is None:
                K[I, ks] = rhs / (1.0 - c4 * cN)
            else:
                K[I, ks] = rhs + c4 * cN * old[I, ks]
        K[I, I] = diag[I]
        if I % 2 == 0:
            if I == 2:
                # Taylor start from the corner compatibility conditions
                K[I, 0] = k00 + 2.0 * d * kx + 2.0 * d * d * kxx
            elif I == 4:
                # (-3 K0 + 4 K1 - K2) / (4d) = h K0 with K1 = K(x, 2d), K2 = K(x, 4d)
                K[I, 0] = (4.0 * K[I, 2] - K[I, 4]) / (3.0 + 4.0 * d * h)
            else:
                # third-order one-sided closure on K(x, 2d), K(x, 4d), K(x, 6d)
                K[I, 0] = (18.0 * K[I, 2] - 9.0 * K[I, 4] + 2.0 * K[I, 6]) / (11.0 + 12.0 * d * h)
    return K


def _march_picard(p, h, q, j, n, tol=1e-15, max_iter=400):
    K = np.zeros((n + 1, n + 1))
    K[np.triu_indices(n + 1, 1)] = np.nan
    K_old = _march(p, h, q, j, n, picard_from=np.nan_to_num(K))
    for it in range(1, max_iter + 1):
        K_new = _march(p, h, q, j, n, picard_from=np.nan_to_num(K_old))
        delta = np.nanmax(np.abs(K_new - K_old))
        scale = max(1.0, np.nanmax(np.abs(K_new)))
        K_old = K_new
        if delta <= tol * scale:
            return K_new
    raise NumericalError(f"Picard iteration did not converge in {max_iter} iterations (last change {delta:.3g})")


def solve_goursat(p, h, q, j, mesh=128, method="march"):
    """Kernel on the uniform triangle grid with ``mesh`` cells per side.

    ``method`` is ``"march"`` (implicit reaction term, one sweep) or
    ``"picard"`` (successive approximations of the same discrete system).
    The sweeps run with steps ``1/(2 mesh)`` and ``1/(4 mesh)`` and are
    Richardson-extrapolated to fourth order.
    """
    mesh = int(mesh)
    if mesh < 16:
        raise DomainError("kernel mesh must have at least 16 cells")
    for name, v in (("h", h), ("j", j)):
        if not np.isfinite(v):
            raise DomainError(f"Robin coefficient {name} must be finite")
    if method == "march":
        sweep = _march
    elif method == "picard":
        sweep = _march_picard
    else:
        raise UsageError(f"unknown kernel method {method!r}")
    coarse = sweep(p, h, q, j, 2 * mesh)
    fine = sweep(p, h, q, j, 4 * mesh)
    i, k = np.tril_indices(mesh + 1)
    vals = np.full((mesh + 1, mesh + 1), np.nan)
    vals[i, k] = (4.0 * fine[4 * i, 4 * k] - coarse[2 * i, 2 * k]) / 3.0
    x = np.linspace(0.0, 1.0, mesh + 1)
    # the diagonal is known in closed form; keep it exact
    vals[np.diag_indices(mesh + 1)] = diagonal_value(p, h, q, j, x)
    return Kernel(x, vals, p, float(h), q, float(j))


def goursat_residual(kernel):
    """Largest fourth-order discrete residual of the kernel equation at interior nodes."""
    K, x = kernel.values, kernel.x
    dx = x[1] - x[0]
    c = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * dx * dx)
    m = kernel.m
    worst = 0.0
    qx, py = kernel.q(x), kernel.p(x)
    for i in range(4, m - 1):
        ks = np.arange(2, i - 3)
        if ks.size == 0:
            continue
        kxx = sum(c[s] * K[i + s - 2, ks] for s in range(5))
        kyy = sum(c[s] * K[i, ks + s - 2] for s in range(5))
        r = kxx - kyy - (qx[i] - py[ks]) * K[i, ks]
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


# {{{ quadrature on rows

def _row_weights(n, dx):
    """Weights for ``int_0^{n dx}`` on ``n + 1`` equispaced nodes (composite Simpson)."""
    w = np.zeros(n + 1)
    if n == 0:
        return w
    if n == 1:
        w[:] = 0.5 * dx
        return w
    if n % 2 == 0:
        w[0:n + 1:2] = 2.0
        w[1:n:2] = 4.0
        w[0] = w[-1] = 1.0
        return w * dx / 3.0
    # Simpson on the first n-3 intervals, 3/8 rule on the last three
    if n > 3:
        w[: n - 2] = _row_weights(n - 3, dx)
    w[n - 3:] += np.array([1.0, 3.0, 3.0, 1.0]) * 3.0 * dx / 8.0
    return w


# }}}

def transform(kernel, phi):
    """``psi(x_i) = phi(x_i) + int_0^{x_i} K(x_i, y) phi(y) dy`` on the kernel grid.

    ``phi`` holds samples at ``kernel.x`` (last axis); several rows are allowed.
    Product integration: ``phi`` is replaced by its cubic spline (it may
    oscillate on the grid scale), each kernel row by a local interpolant, and
    every cell is integrated with 4-point Gauss-Legendre.
    """
    phi = np.asarray(phi, dtype=float)
    x = kernel.x
    if phi.shape[-1] != x.size:
        raise UsageError(f"phi has {phi.shape[-1]} samples, kernel grid has {x.size}")
    dx = x[1] - x[0]
    g, gw = np.polynomial.legendre.leggauss(4)
    g, gw = 0.5 * (g + 1.0), 0.5 * gw * dx
    yq = (x[:-1, None] + dx * g[None, :]).ravel()
    phi_q = CubicSpline(x, phi, axis=-1)(yq)
    out = phi.copy()
    # short rows: a bivariate cubic fitted on the corner rows 0..4
    ci, ck = np.tril_indices(5)
    pw = [(a, b) for a in range(4) for b in range(4 - a)]
    V = np.column_stack([x[ci] ** a * x[ck] ** b for a, b in pw])
    corner = np.linalg.lstsq(V, kernel.values[ci, ck], rcond=None)[0]
    for i in range(1, x.size):
        if i >= 3:
            kq = CubicSpline(x[: i + 1], kernel.row(i))(yq[: 4 * i])
        else:
            y = yq[: 4 * i]
            kq = sum(c * x[i] ** a * y ** b for c, (a, b) in zip(corner, pw))
        out[..., i] += phi_q[..., : 4 * i] @ (kq * np.tile(gw, i))
    return out


def _dx_boundary(kernel):
    """``K_x(1, y_k)`` by fifth-order one-sided differences.

    For ``y <= 1/2`` backward differences in ``x``; above that the derivative
    along ``(1, 1)`` minus ``K_y`` along the row ``x = 1``.
    """
    K = kernel.values
    m = kernel.m
    dx = kernel.x[1] - kernel.x[0]
    c = np.array([25.0, -48.0, 36.0, -16.0, 3.0]) / (12.0 * dx)
    out = np.empty(m + 1)
    row = K[m]
    ky = np.empty(m + 1)
    ky[2:-2] = (row[:-4] - 8 * row[1:-3] + 8 * row[3:-1] - row[4:]) / (12.0 * dx)
    ky[:2] = [-(c @ row[k:k + 5]) for k in (0, 1)]
    ky[-2:] = [c @ row[k - 4:k + 1][::-1] for k in (m - 1, m)]
    for k in range(m + 1):
        if kernel.x[k] <= 0.5:
            out[k] = c @ K[m - np.arange(5), k]
        else:
            diag = c @ K[m - np.arange(5), k - np.arange(5)]
            out[k] = diag - ky[k]
    return out


def endpoint_identities(kernel, spec_p, H, J):
    """Moments that must vanish when the two systems share their data.

    Returns a dict with ``moment`` (``int K(1,y) phi_n``), ``flux``
    (``(J - H + K(1,1)) phi_n(1) + int K_x(1,y) phi_n``) and ``corner``
    (``J - H + K(1,1)``). ``spec_p`` must be computed on a mesh whose
    nodes contain the kernel grid.
    """
    nodes = spec_p.mesh.nodes
    stride = (nodes.size - 1) // kernel.m
    if stride * kernel.m != nodes.size - 1:
        raise UsageError("spectral mesh must refine the kernel grid")
    phis = spec_p.phis[:, ::stride]
    dx = kernel.x[1] - kernel.x[0]
    w = _row_weights(kernel.m, dx)
    k1 = kernel.values[kernel.m]
    corner = J - H + k1[-1]
    moment = phis @ (w * k1)
    flux = corner * phis[:, -1] + phis @ (w * _dx_boundary(kernel))
    return {"moment": moment, "flux": flux, "corner": float(corner)}


def _derivative(v, dx):
    """Fourth-order derivative with one-sided closures."""
    d = np.empty_like(v)
    d[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12.0 * dx)
    c = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12.0 * dx)
    c1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / (12.0 * dx)
    d[0], d[1] = c @ v[:5], c1 @ v[:5]
    d[-1], d[-2] = -(c @ v[::-1][:5]), -(c1 @ v[::-1][:5])
    return d


def reconstruct_params_from_kernel(kernel, H, noise_tol=0.05):
    """Invert the diagonal relation: returns ``(J, j, q_minus_p)`` on ``kernel.x``.

    ``J = H - K(1,1)``, ``j = h + K(0,0)`` and ``q - p = 2 d/dx K(x,x)``.
    """
    diag = kernel.diagonal()
    dx = kernel.x[1] - kernel.x[0]
    d4 = _derivative(diag, dx)
    d2 = np.gradient(diag, dx, edge_order=2)
    scale = max(1.0, float(np.max(np.abs(d4))))
    if np.max(np.abs(d4 - d2)) > noise_tol * scale:
        raise NumericalError("kernel diagonal too rough to differentiate")
    return H - diag[-1], kernel.h + diag[0], 2.0 * d4
