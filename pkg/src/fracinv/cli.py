"""Command-line entry point.

Subcommands: ``forward``, ``spectrum``, ``kernel``, ``invert TRACE.csv`` and
``experiment SCENARIO``. Exit codes: 0 success, 2 configuration or usage
error, 3 numerical failure, 4 fit failure.
"""

import argparse
import os
import sys

import numpy as np

from . import experiments as ex
from . import inverse
from .config import default_config, load_config
from .csvio import read_trace_csv, write_modes_csv, write_table, write_trace_csv
from .errors import ConfigError, DomainError, EvaluationError, FitError, NumericalError, UsageError
from .kernel import endpoint_identities, solve_goursat
from .plotting import HeatmapSpec, PlotSpec, Series, emit_svg
from .sturm_liouville import Mesh, eigensystem, omega_constant

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_FIT = 0, 2, 3, 4


def _say(args, msg):
    if not args.quiet:
        print(msg)


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = cfg.replace("noise", seed=args.seed)
    if args.modes is not None:
        cfg = cfg.replace("fit", modes=args.modes)
    return cfg


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def cmd_forward(args, cfg):
    rng = np.random.default_rng(cfg["noise"]["seed"])
    params, _, spec, trace = ex.synthesize(cfg, rng=rng)
    write_trace_csv(trace, _out(args, "trace.csv"))
    emit_svg(PlotSpec([Series("u(0,t)", trace.times, trace.left), Series("u(1,t)", trace.times, trace.right)],
                      xlabel="t", ylabel="boundary value", xscale="log"), _out(args, "trace.svg"))
    _say(args, f"alpha={params.alpha} modes={spec.n} points={len(trace)} truncation={trace.truncation:.3g}")
    _say(args, f"wrote {_out(args, 'trace.csv')}")
    return EXIT_OK


def cmd_spectrum(args, cfg):
    params = ex.build_params(cfg)
    n = args.modes or cfg["fit"]["modes"]
    spec = eigensystem(params.potential, params.robin, n, mesh=ex.build_mesh(cfg))
    omega = omega_constant(params.potential, params.robin)
    m = np.arange(n) * np.pi
    rows = [(k + 1, spec.lambdas[k], spec.rhos[k], spec.phi1[k]) for k in range(n)]
    write_table(_out(args, "spectrum.csv"), ("n", "lambda", "rho", "phi_at_1"), rows)
    x = spec.mesh.nodes
    emit_svg(PlotSpec([Series(f"phi_{k + 1}", x, spec.phis[k]) for k in range(min(n, 5))], xlabel="x",
                      ylabel="eigenfunction"), _out(args, "spectrum.svg"))
    _say(args, f"omega={omega!r}")
    for k in range(n):
        dev = m[k] * (np.sqrt(spec.lambdas[k]) - m[k]) if k else np.nan
        _say(args, f"{k + 1:3d}  lambda={spec.lambdas[k]:.12g}  (n-1)pi(sqrt(lambda)-(n-1)pi)={dev:.6g}")
    return EXIT_OK


def cmd_kernel(args, cfg):
    params = ex.build_params(cfg)
    kc = cfg["kernel"]
    q = inverse.potential_from_coeffs(kc["coeffs"], kind=cfg["model"]["basis"])
    k = solve_goursat(params.potential, params.robin.h, q, kc["h"], kc["mesh"])
    write_table(_out(args, "kernel.csv"), ("x", "y", "K"), k.triangle())
    emit_svg(HeatmapSpec(k.x, k.values, title="K(x, y)", colorbar="K"), _out(args, "kernel.svg"))
    spec = eigensystem(params.potential, params.robin, args.modes or cfg["fit"]["modes"], mesh=Mesh(kc["mesh"]))
    ids = endpoint_identities(k, spec, params.robin.H, kc["J"])
    rows = [(n + 1, ids["moment"][n], ids["flux"][n]) for n in range(spec.n)]
    write_table(_out(args, "endpoint_identities.csv"), ("n", "moment", "flux"), rows)
    _say(args, f"corner J - H + K(1,1) = {ids['corner']!r}")
    for n, mo, fl in rows:
        _say(args, f"{n:3d}  moment={mo: .3e}  flux={fl: .3e}")
    _say(args, f"mesh={kc['mesh']} K(1,1)={float(k.values[-1, -1])!r}")
    return EXIT_OK


def _report(res, fp):
    lines = ["[fingerprint]", f"alpha = {fp.alpha!r}", f"residual = {fp.residual!r}", f"ok = {int(fp.ok)}"]
    if fp.message:
        lines.append(f"message = {fp.message}")
    if res is not None and res.params is not None:
        r = res.params.robin
        lines += ["", "[operator]", f"h = {r.h!r}", f"H = {r.H!r}",
                  "coeffs = " + ", ".join(repr(float(c)) for c in res.operator.coeffs),
                  f"misfit = {res.operator.misfit!r}", f"converged = {int(res.operator.converged)}",
                  "", "[check]", f"resynthesis = {res.resynthesis!r}"]
    return "\n".join(lines) + "\n"


def cmd_invert(args, cfg):
    trace = read_trace_csv(args.trace)
    f = cfg["fit"]
    res = inverse.recover(trace, f["modes"], f["basis_dim"], basis=cfg["model"]["basis"],
                          mesh=ex.build_mesh(cfg), alpha_bounds=(f["alpha_min"], f["alpha_max"]))
    fp = res.fingerprint
    with open(_out(args, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(_report(res, fp))
    if not np.isnan(fp.alpha):
        write_modes_csv(fp, _out(args, "modes.csv"))
    _say(args, _report(res, fp).rstrip())
    return EXIT_OK if fp.ok else EXIT_FIT


def cmd_experiment(args, cfg):
    bundle = ex.run_experiment(args.scenario, cfg, args.out, seed=cfg["noise"]["seed"])
    _say(args, f"{bundle.name}: wrote {bundle.csv_path}")
    for k, v in bundle.summary.items():
        _say(args, f"  {k}: {v}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, help="random seed (overrides [noise] seed)")
    common.add_argument("--modes", type=int, help="number of modes (overrides [fit] modes)")
    common.add_argument("--quiet", action="store_true", help="suppress console output")
    p = argparse.ArgumentParser(prog="fracinv", description="Forward and inverse problems for time-fractional "
                                "diffusion-wave equations with Robin boundary conditions.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("forward", parents=[common], help="synthesize boundary traces")
    sub.add_parser("spectrum", parents=[common], help="eigenvalues of the configured operator")
    sub.add_parser("kernel", parents=[common], help="transformation kernel between two operators")
    inv = sub.add_parser("invert", parents=[common], help="recover the model from a trace CSV")
    inv.add_argument("trace")
    exp = sub.add_parser("experiment", parents=[common], help="run a named scenario")
    exp.add_argument("scenario", choices=sorted(ex.SCENARIOS))
    return p


COMMANDS = {"forward": cmd_forward, "spectrum": cmd_spectrum, "kernel": cmd_kernel, "invert": cmd_invert,
            "experiment": cmd_experiment}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, EvaluationError, DomainError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FitError as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
