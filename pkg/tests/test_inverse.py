import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma

from fracinv import forward as F
from fracinv import inverse as I
from fracinv import mittag_leffler as ML
from fracinv import sturm_liouville as S
from fracinv.errors import BiasWarning, FitError, IllPosednessWarning, UsageError

MESH = S.Mesh()
BUMP = I.potential_from_coeffs([1.0, 3.0, 1.0])
ROBIN = S.RobinPair(1.0, 1.3)
T_GRID = np.geomspace(1e-3, 5.0, 400)


@pytest.fixture(scope="module")
def bump8():
    return S.eigensystem(BUMP, ROBIN, 8, mesh=MESH)


def exact_fingerprint(spec, alpha, pn, pn0=None):
    n = len(pn)
    return I.SpectralFingerprint(alpha, spec.lambdas[:n].copy(), np.asarray(pn, float),
                                 None if pn0 is None else np.asarray(pn0, float), 0.0)


def right_trace(spec, alpha, pn, t=T_GRID):
    n = len(pn)
    return F.trace_from_modes(alpha, spec.lambdas[:n], np.asarray(pn, float), spec.phi1[:n], t)


# {{{ order and mode fit

@pytest.fixture(scope="module")
def fit07(bump8):
    pn = np.array([1.0, -0.6, 0.4])
    tr = F.trace_from_modes(0.7, bump8.lambdas[:3], pn, bump8.phi1[:3], T_GRID)
    return I.fit_order_and_modes(tr, 3), bump8.lambdas[:3], pn


def test_fit_three_modes(fit07):
    fp, lam, pn = fit07
    assert fp.ok
    assert abs(fp.alpha - 0.7) <= 1e-3
    np.testing.assert_allclose(fp.lambdas, lam, rtol=1e-4)
    np.testing.assert_allclose(fp.pn, pn, rtol=1e-4)
    assert fp.residual <= I.RESIDUAL_TOL


def test_fingerprint_invariants(fit07):
    fp = fit07[0]
    assert np.all(fp.lambdas > 0.0) and np.all(np.diff(fp.lambdas) > 0.0)
    assert 0.0 < fp.alpha < 2.0 and np.isfinite(fp.residual)
    assert fp.require() is fp
    np.testing.assert_allclose(fp.model(T_GRID[:5]), fp.model(T_GRID)[:5], rtol=0, atol=0)


def test_fit_single_exponential():
    t = np.linspace(0.01, 4.0, 300)
    tr = F.BoundaryTrace(t, np.exp(-2.0 * t), 0.5 * np.exp(-2.0 * t))
    fp = I.fit_order_and_modes(tr, 1, alpha_bounds=(0.8, 1.2))
    assert abs(fp.alpha - 1.0) <= 1e-6
    assert fp.lambdas[0] == pytest.approx(2.0, rel=1e-6)
    assert fp.pn[0] == pytest.approx(1.0, rel=1e-6)


def test_fit_zero_trace_flags_failure():
    tr = F.BoundaryTrace(T_GRID, np.zeros_like(T_GRID), np.zeros_like(T_GRID))
    fp = I.fit_order_and_modes(tr, 4)
    assert not fp.ok and np.isnan(fp.alpha)
    assert np.all(np.abs(fp.amplitudes()) < 1e-10)
    with pytest.raises(FitError):
        fp.require()


def test_fit_rejects_too_many_modes():
    tr = F.BoundaryTrace(T_GRID, np.exp(-T_GRID), np.exp(-T_GRID))
    with pytest.raises(UsageError):
        I.fit_order_and_modes(tr, I.MAX_FIT_MODES + 1)

# }}}


# {{{ transformed data

def test_laplace_single_mode():
    alpha = 0.7
    t = np.geomspace(1e-5, 20.0, 600)
    tr = F.trace_from_modes(alpha, np.array([5.0]), np.array([1.0]), np.array([1.0]), t)
    fp = I.SpectralFingerprint(alpha, np.array([5.0]), np.array([1.0]), None, 0.0)
    xi = np.geomspace(1.0, 100.0, 25)
    vals = I.laplace_trace(tr, xi, alpha, fingerprint=fp)
    np.testing.assert_allclose(vals, 1.0 / (xi + 5.0), rtol=0, atol=1e-4)


def test_laplace_zero_trace():
    tr = F.BoundaryTrace(T_GRID, np.zeros_like(T_GRID), np.zeros_like(T_GRID))
    assert np.all(I.laplace_trace(tr, np.array([1.0, 10.0]), 0.5) == 0.0)


def test_laplace_truncated_window_warns():
    t = np.geomspace(1e-3, 0.5, 200)
    tr = F.trace_from_modes(0.7, np.array([1.0]), np.array([1.0]), np.array([1.0]), t)
    with pytest.warns(BiasWarning):
        I.laplace_trace(tr, np.array([1.0, 10.0]), 0.7)


def test_rational_poles_two_modes():
    alpha = 0.6
    lam, pn = np.array([2.0, 9.0]), np.array([1.0, 0.5])
    t = np.geomspace(1e-5, 20.0, 800)
    tr = F.trace_from_modes(alpha, lam, pn, np.ones(2), t)
    fp = I.SpectralFingerprint(alpha, lam, pn, None, 0.0)
    xi = np.geomspace(0.5, 200.0, 40)
    poles, res = I.rational_poles(xi, I.laplace_trace(tr, xi, alpha, fingerprint=fp), 2)
    np.testing.assert_allclose(poles, lam, rtol=1e-3)
    np.testing.assert_allclose(res, pn, rtol=1e-3)

# }}}


# {{{ operator and initial data

def test_recover_operator_free():
    p0 = S.Potential.constant(0.0)
    rob = S.RobinPair(1.0, 1.0)
    spec = S.eigensystem(p0, rob, 4, mesh=MESH)
    pn = [1.0, 0.5, -0.3, 0.2]
    fit = I.recover_operator(exact_fingerprint(spec, 0.5, pn), right_trace(spec, 0.5, pn), 1, mesh=MESH)
    assert abs(fit.robin.h - 1.0) <= 1e-3 and abs(fit.robin.H - 1.0) <= 1e-3
    assert np.max(np.abs(fit.potential(np.linspace(0, 1, 101)))) <= 5e-3


def test_recover_operator_start_at_truth(bump8):
    pn = [1.0, -0.6, 0.4, 0.25, -0.15]
    fp = exact_fingerprint(bump8, 0.7, pn)
    fit = I.recover_operator(fp, right_trace(bump8, 0.7, pn), 3, mesh=MESH, start=([1.0, 3.0, 1.0], 1.0, 1.3))
    assert fit.iterations == 0 and fit.misfit <= 1e-10


def test_recover_operator_bump_eight_modes(bump8):
    pn = [1.0, -0.6, 0.4, 0.25, -0.15, 0.1, -0.08, 0.05]
    fit = I.recover_operator(exact_fingerprint(bump8, 0.7, pn), right_trace(bump8, 0.7, pn), 3, mesh=MESH)
    x = np.linspace(0.0, 1.0, 201)
    assert np.max(np.abs(fit.potential(x) - BUMP(x))) <= 1e-2
    assert abs(fit.robin.h - 1.0) <= 1e-3 and abs(fit.robin.H - 1.3) <= 1e-3


def test_recover_operator_underdetermined(bump8):
    pn = [1.0, 0.5, 0.2]
    with pytest.raises(UsageError):
        I.recover_operator(exact_fingerprint(bump8, 0.7, pn), right_trace(bump8, 0.7, pn), 3, mesh=MESH)


def test_recover_initial_single_mode(bump8):
    data = I.recover_initial(exact_fingerprint(bump8, 0.7, [0.8]), bump8)
    np.testing.assert_allclose(data.a, 0.8 * bump8.phis[0], rtol=0, atol=1e-15)
    assert data.a0 is None


def test_recover_initial_zero(bump8):
    data = I.recover_initial(exact_fingerprint(bump8, 1.4, [0.0, 0.0], [0.0, 0.0]), bump8)
    assert np.all(data.a == 0.0) and np.all(data.a0 == 0.0)


def test_recover_initial_closed_loop(bump8):
    # a with five modes: the recovered profile is exact up to the neglected modes (none here)
    pn = np.array([1.0, -0.6, 0.4, 0.25, -0.15])
    truth = S.InitialData.from_modes(bump8, np.concatenate([pn, np.zeros(3)]))
    rec = I.recover_initial(exact_fingerprint(bump8, 0.7, pn), bump8)
    assert np.max(np.abs(rec.a - truth.a)) <= 1e-12

# }}}


# {{{ source deconvolution

def _one(t):
    return np.ones_like(np.asarray(t, dtype=float))


def _zero(t):
    return np.zeros_like(np.asarray(t, dtype=float))


def source_case(alpha, theta, dtheta, t, pn=(1.0,)):
    spec = S.eigensystem(BUMP, ROBIN, len(pn), mesh=MESH)
    g = S.InitialData.from_modes(spec, np.asarray(pn, float))
    tt = np.linspace(0.0, t[-1], 2001)
    src = F.SourceSpec(g, tt, theta(tt), dtheta=dtheta, theta_fn=theta)
    params = F.ModelParams(alpha, BUMP, ROBIN)
    return spec, src, F.solve_source(params, src, spec, t, t_min=t[0])


def test_deconvolve_constant_theta():
    alpha = 0.7
    t = np.geomspace(1e-5, 5.0, 400)
    spec, src, tr = source_case(alpha, _one, _zero, t)
    dec = I.deconvolve_source(tr, src, alpha)
    e1 = ML.ml(alpha, 1.0, -spec.lambdas[0] * t**alpha)
    k = t >= 1e-3
    assert np.max(np.abs(dec.left - e1)[k]) <= 1e-4
    assert np.max(np.abs(dec.right - spec.phi1[0] * e1)[k]) <= 1e-4


def test_deconvolve_linear_theta():
    alpha = 0.7
    spec, src, tr = source_case(alpha, lambda t: 1.0 + np.asarray(t, float), _one, T_GRID)
    dec = I.deconvolve_source(tr, src, alpha)
    e1 = ML.ml(alpha, 1.0, -spec.lambdas[0] * T_GRID**alpha)
    assert np.max(np.abs(dec.left - e1)) <= 1e-3
    assert np.max(np.abs(dec.right - spec.phi1[0] * e1)) <= 1e-3


def test_deconvolve_velocity_branch():
    # above order one the deconvolved trace is that of zero displacement and velocity g
    alpha = 1.4
    spec, src, tr = source_case(alpha, lambda t: 1.0 + np.asarray(t, float), _one, T_GRID)
    dec = I.deconvolve_source(tr, src, alpha)
    e2 = T_GRID * ML.ml(alpha, 2.0, -spec.lambdas[0] * T_GRID**alpha)
    assert np.max(np.abs(dec.left - e2)) <= 1e-3


def test_deconvolve_zero_data():
    tr = F.BoundaryTrace(T_GRID, np.zeros_like(T_GRID), np.zeros_like(T_GRID))
    dec = I.deconvolve_source(tr, (_one, _zero), 0.5)
    assert np.all(dec.left == 0.0) and np.all(dec.right == 0.0)


def test_deconvolve_flat_theta_warns():
    t = np.geomspace(1e-3, 2.0, 60)
    tr = F.BoundaryTrace(t, t**2, t**2)
    with pytest.warns(IllPosednessWarning):
        I.deconvolve_source(tr, (lambda s: np.asarray(s, float), _one), 0.5)


def test_deconvolve_noisy_meets_discrepancy():
    alpha = 0.7
    spec, src, tr = source_case(alpha, _one, _zero, T_GRID)
    level = 1e-4
    noisy = F.add_noise(tr, level, np.random.default_rng(3))
    dec = I.deconvolve_source(noisy, src, alpha, noise_level=level)
    e1 = ML.ml(alpha, 1.0, -spec.lambdas[0] * T_GRID**alpha)
    assert np.max(np.abs(dec.left - e1)[T_GRID >= 1e-2]) <= 5e-2


@settings(max_examples=30, deadline=None)
@given(g=st.floats(0.05, 1.95), seed=st.integers(0, 2**16))
def test_fractional_weights_exact_on_linear(g, seed):
    s = np.concatenate([[0.0], np.sort(np.random.default_rng(seed).uniform(0.0, 3.0, 12))])
    W = I._frac_weights(s, g)
    np.testing.assert_allclose(W @ (2.0 + s), 2.0 * s**g / gamma(g + 1.0) + s ** (g + 1.0) / gamma(g + 2.0),
                               rtol=1e-9, atol=1e-12)

# }}}


# {{{ distinguishability and the mode union

def _phi1_data(spec, alpha):
    return S.InitialData.from_modes(spec, np.array([1.0]), np.array([0.0]) if alpha > 1 else None)


def test_distinguishability_identical_is_zero(bump8):
    p = F.ModelParams(0.7, BUMP, ROBIN)
    d = S.InitialData.from_modes(bump8, np.array([1.0, 0.3, 0.1]))
    assert I.distinguishability(p, d, p, d, 5.0, 100, n_modes=6) == 0.0


def test_distinguishability_order():
    spec = S.eigensystem(BUMP, ROBIN, 1, mesh=MESH)
    d = _phi1_data(spec, 0.6)
    sep = I.distinguishability(F.ModelParams(0.6, BUMP, ROBIN), d, F.ModelParams(0.8, BUMP, ROBIN), d, 5.0, 200,
                               n_modes=4)
    # measured 0.161 on this grid
    assert sep >= 0.1


def test_distinguishability_robin():
    pa, pb = F.ModelParams(0.7, BUMP, S.RobinPair(1.0, 1.3)), F.ModelParams(0.7, BUMP, S.RobinPair(1.2, 1.3))
    data = S.InitialData.from_functions(MESH, lambda x: np.cos(np.pi * x) + 2.0)
    sep = I.distinguishability(pa, data, pb, data, 5.0, 200, n_modes=8)
    # measured 0.0805 on this grid
    assert sep >= 0.05


def _coeffs(values):
    return S.ModeCoefficients(np.asarray(values, float), None)


def test_union_odd_even():
    odd, even = _coeffs([1, 0, 1, 0, 1, 0]), _coeffs([0, 1, 0, 1, 0, 1])
    assert I.assumption_union_check([odd, even], 6, 1e-12)
    assert not I.assumption_union_check([odd], 6, 1e-12)


def test_union_single_gap():
    assert not I.assumption_union_check([_coeffs([1.0, 0.5, 0.0, 0.2])], 4, 1e-12)


def test_union_empty():
    with pytest.raises(UsageError):
        I.assumption_union_check([], 3, 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.sampled_from([0.0, 0.0, 1e-14, 0.3, -1.0]), min_size=5, max_size=5), min_size=1,
                max_size=4))
def test_union_matches_per_set_checks(sets):
    coeffs = [_coeffs(c) for c in sets]
    failed = [set(S.assumption_check(c, 5, 1e-10)) for c in coeffs]
    assert I.assumption_union_check(coeffs, 5, 1e-10) == (not set.intersection(*failed))

# }}}


def test_recover_pipeline_smoke():
    # single mode, narrow order window: exercises fit, operator recovery and resynthesis together
    p0 = S.Potential.constant(0.0)
    rob = S.RobinPair(1.0, 1.0)
    spec = S.eigensystem(p0, rob, 4, mesh=MESH)
    pn = np.array([1.0, 0.5, -0.3, 0.2])
    params = F.ModelParams(0.5, p0, rob)
    data = S.InitialData.from_modes(spec, pn)
    tr = F.boundary_trace(params, data, spec, S.mode_coefficients(data, spec), T_GRID)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        res = I.recover(tr, 4, 1, mesh=MESH, alpha_bounds=(0.4, 0.6), truth=(params, data))
    assert res.ok and res.resynthesis <= 1e-6
    assert res.errors["alpha"] <= 1e-3 and res.errors["h"] <= 1e-3 and res.errors["H"] <= 1e-3
