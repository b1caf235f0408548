"""Named experiment scenarios built from an :class:`ExperimentConfig`.

Every scenario returns a table (header and rows) and a summary dict; the
runner writes them as ``<name>.csv`` and ``<name>_summary.txt`` next to a
``metadata.txt`` holding the config hash, seed, versions and a timestamp.
The CSV files depend only on the config and the seed.
"""

import datetime
import os
import platform
from dataclasses import dataclass, field

import numpy as np
import scipy

from . import inverse
from . import mittag_leffler as ml_mod
from .csvio import write_table
from .errors import UsageError
from .forward import ModelParams, SourceSpec, add_noise, boundary_trace, solve_source
from .sturm_liouville import InitialData, Mesh, RobinPair, eigensystem, mode_coefficients

SWEEP_ALPHAS = (0.4, 0.7, 1.0, 1.4, 1.8)
ROBIN_FACTORS = (0.5, 1.0, 2.0, 4.0)
ML_ALPHAS = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75)
ML_Z = (-0.5, -2.0, -10.0, -50.0, -500.0)


# {{{ model construction

def build_mesh(cfg):
    return Mesh(cfg["grid"]["x_cells"])


def build_params(cfg, alpha=None, H=None):
    m = cfg["model"]
    pot = inverse.potential_from_coeffs(m["coeffs"], kind=m["basis"])
    return ModelParams(m["alpha"] if alpha is None else alpha, pot, RobinPair(m["h"], m["H"] if H is None else H))


def _padded(values, n):
    out = np.zeros(n)
    out[:len(values)] = values[:n]
    return out


def build_initial(cfg, spec, alpha):
    """Initial data with the configured mode coefficients on ``spec``.

    Above order one a missing velocity block means zero velocity.
    """
    ini = cfg["initial"]
    pn = _padded(ini["modes"], spec.n)
    pn0 = None
    if alpha > 1.0:
        pn0 = _padded(ini["velocity"], spec.n)
    return InitialData.from_modes(spec, pn, pn0)


def synthesize(cfg, alpha=None, H=None, rng=None, level=None):
    """``(params, data, spectrum, trace)`` for the configured model, with optional noise."""
    params = build_params(cfg, alpha, H)
    n = max(len(cfg["initial"]["modes"]), cfg["fit"]["modes"])
    spec = eigensystem(params.potential, params.robin, n, mesh=build_mesh(cfg))
    data = build_initial(cfg, spec, params.alpha)
    trace = boundary_trace(params, data, spec, mode_coefficients(data, spec), cfg.time_grid())
    level = cfg["noise"]["level"] if level is None else level
    if level > 0.0:
        if rng is None:
            raise UsageError("noisy synthesis needs a random generator")
        trace = add_noise(trace, level, rng)
    return params, data, spec, trace


def _fit(cfg, trace, n=None):
    f = cfg["fit"]
    return inverse.fit_order_and_modes(trace, n or f["modes"], alpha_bounds=(f["alpha_min"], f["alpha_max"]),
                                       alpha_step=f["alpha_step"], side=f["side"])


def _lambda_error(fp, spec):
    k = min(fp.n, spec.n)
    return float(np.max(np.abs(fp.lambdas[:k] / spec.lambdas[:k] - 1.0)))

# }}}


# {{{ scenarios

def order_sweep(cfg, rng):
    header = ("alpha_true", "alpha_fit", "alpha_error", "lambda_rel_error", "residual", "ok")
    rows = []
    for a in SWEEP_ALPHAS:
        if not cfg["fit"]["alpha_min"] <= a <= cfg["fit"]["alpha_max"]:
            continue
        _, _, spec, trace = synthesize(cfg, alpha=a, rng=rng)
        fp = _fit(cfg, trace)
        rows.append((a, fp.alpha, abs(fp.alpha - a), _lambda_error(fp, spec), fp.residual, int(fp.ok)))
    worst = max((r[2] for r in rows), default=np.nan)
    return header, rows, {"cases": len(rows), "max_alpha_error": worst}


def robin_sweep(cfg, rng):
    header = ("H_true", "h_fit", "H_fit", "h_error", "H_error", "misfit", "converged")
    rows = []
    h = cfg["model"]["h"]
    for f in ROBIN_FACTORS:
        H = f * cfg["model"]["H"]
        _, _, spec, trace = synthesize(cfg, H=H, rng=rng)
        fp = _fit(cfg, trace)
        if not fp.ok:
            rows.append((H, np.nan, np.nan, np.nan, np.nan, np.nan, 0))
            continue
        op = inverse.recover_operator(fp, trace, cfg["fit"]["basis_dim"], basis=cfg["model"]["basis"],
                                      mesh=build_mesh(cfg))
        rows.append((H, op.robin.h, op.robin.H, abs(op.robin.h - h), abs(op.robin.H - H), op.misfit,
                     int(op.converged)))
    worst = max((max(r[3], r[4]) for r in rows), default=np.nan)
    return header, rows, {"cases": len(rows), "max_robin_error": worst}


def noise_levels(level):
    return (0.0,) if level == 0.0 else (0.0, level * 1e-2, level * 1e-1, level)


def noise_sweep(cfg, rng):
    header = ("noise_level", "alpha_fit", "alpha_error", "lambda_rel_error", "residual")
    rows = []
    alpha = cfg["model"]["alpha"]
    for level in noise_levels(cfg["noise"]["level"]):
        _, _, spec, trace = synthesize(cfg, rng=rng, level=level)
        fp = _fit(cfg, trace)
        rows.append((level, fp.alpha, abs(fp.alpha - alpha), _lambda_error(fp, spec), fp.residual))
    return header, rows, {"levels": len(rows), "alpha_error_at_max_noise": rows[-1][2]}


def _theta_poly(coeffs):
    c = np.asarray(coeffs, dtype=float)
    dc = c[1:] * np.arange(1, c.size)

    def theta(t):
        return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), c)

    def dtheta(t):
        t = np.asarray(t, dtype=float)
        return np.polynomial.polynomial.polyval(t, dc) if dc.size else np.zeros_like(t)

    return theta, dtheta


def source_loop(cfg, rng):
    """Source problem with ``theta`` a polynomial: deconvolve, then refit the order."""
    params = build_params(cfg)
    n = max(len(cfg["source"]["g"]), cfg["fit"]["modes"])
    mesh = build_mesh(cfg)
    spec = eigensystem(params.potential, params.robin, n, mesh=mesh)
    g = InitialData.from_modes(spec, _padded(cfg["source"]["g"], n))
    theta, dtheta = _theta_poly(cfg["source"]["theta"])
    T = cfg["grid"]["T"]
    tt = np.linspace(0.0, T, 2001)
    src = SourceSpec(g, tt, np.broadcast_to(theta(tt), tt.shape), dtheta=dtheta, theta_fn=theta)
    t = cfg.time_grid()
    trace = solve_source(params, src, spec, t)
    level = cfg["noise"]["level"]
    if level > 0.0:
        trace = add_noise(trace, level, rng)
    dec = inverse.deconvolve_source(trace, src, params.alpha, noise_level=level)
    # the deconvolved traces are those of the problem with a = g (order <= 1) or a0 = g (order > 1)
    if params.alpha > 1.0:
        ref_data = InitialData(mesh, np.zeros_like(g.a), np.zeros_like(g.a_q), g.a, g.a_q)
    else:
        ref_data = g
    ref = boundary_trace(params, ref_data, spec, mode_coefficients(ref_data, spec), t)
    dec_err = float(np.max(np.abs(dec.stacked() - ref.stacked())) / np.max(np.abs(ref.stacked())))
    fp = _fit(cfg, dec, n=len(cfg["source"]["g"]))
    header = ("alpha_true", "alpha_fit", "alpha_error", "deconvolution_error", "lambda_rel_error", "residual")
    row = (params.alpha, fp.alpha, abs(fp.alpha - params.alpha), dec_err, _lambda_error(fp, spec), fp.residual)
    return header, [row], {"alpha_error": row[2], "deconvolution_error": dec_err}


def multi_input_union(cfg, rng):
    """Two inputs exciting complementary modes: each fails the assumption, their union passes."""
    params = build_params(cfg)
    n = cfg["fit"]["modes"]
    spec = eigensystem(params.potential, params.robin, n, mesh=build_mesh(cfg))
    base = _padded(cfg["initial"]["modes"], n)
    base[base == 0.0] = 1.0
    odd, even = base.copy(), base.copy()
    odd[1::2], even[0::2] = 0.0, 0.0
    sets = [mode_coefficients(InitialData.from_modes(spec, c), spec) for c in (odd, even)]
    tol = 1e-8
    header = ("input", "n", "coefficient", "excited")
    rows = [(k + 1, j + 1, c.pn[j], int(abs(c.pn[j]) > tol)) for k, c in enumerate(sets) for j in range(n)]
    singles = [inverse.assumption_union_check([c], n, tol) for c in sets]
    summary = {"single_ok": " ".join(str(int(s)) for s in singles),
               "union_ok": int(inverse.assumption_union_check(sets, n, tol))}
    return header, rows, summary


def ml_table(cfg, rng):
    header = ("alpha", "beta", "z", "value", "regime")
    rows = []
    for a in ML_ALPHAS:
        r0, r1 = ml_mod.regime_bounds(a)
        for b in (1.0, 2.0):
            for z in ML_Z:
                regime = "series" if abs(z) <= r0 else "asymptotic" if abs(z) >= r1 else "contour"
                if a == 1.0:
                    regime = "closed"
                rows.append((a, b, z, float(ml_mod.ml(a, b, z)), regime))
    return header, rows, {"entries": len(rows)}


SCENARIOS = {
    "order-sweep": order_sweep,
    "robin-sweep": robin_sweep,
    "noise-sweep": noise_sweep,
    "theorem2-loop": source_loop,
    "multi-input-union": multi_input_union,
    "ml-table": ml_table,
}

# }}}


@dataclass
class ResultBundle:
    """Files written by one scenario run and its summary metrics."""

    name: str
    csv_path: str
    summary: dict
    metadata: dict = field(default_factory=dict)


def _format_summary(summary):
    return "".join(f"{k}: {v!r}\n" if isinstance(v, float) else f"{k}: {v}\n" for k, v in summary.items())


def run_experiment(name, cfg, out_dir, seed=None):
    """Run scenario ``name`` and write its CSV, summary and metadata into ``out_dir``."""
    if name not in SCENARIOS:
        raise UsageError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    seed = cfg["noise"]["seed"] if seed is None else seed
    rng = np.random.default_rng(seed)
    header, rows, summary = SCENARIOS[name](cfg, rng)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{name}.csv")
    write_table(csv_path, header, rows)
    with open(os.path.join(out_dir, f"{name}_summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(_format_summary(summary))
    meta = {
        "scenario": name,
        "config_sha256": cfg.digest(),
        "seed": seed,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    with open(os.path.join(out_dir, "metadata.txt"), "w", encoding="utf-8") as fh:
        fh.write("".join(f"{k}: {v}\n" for k, v in meta.items()))
    return ResultBundle(name, csv_path, summary, meta)
