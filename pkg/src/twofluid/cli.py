"""Command-line entry point ``twofluid``.

Exit codes: 0 success, 2 validation error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .closure import ModelParams, closure_state, equilibrium_coefficients
from .errors import (ConfigurationError, ConvergenceError, DomainError, NumericalAbort,
                     StateError)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _floats(text):
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _summation(text):
    if text in ("inf", "infinity"):
        return math.inf
    if text == "1":
        return 1
    raise argparse.ArgumentTypeError("r must be 1 or inf")


def _add_params(p, with_dim=True):
    if with_dim:
        p.add_argument("--dim", type=int, default=2)
    p.add_argument("--gamma-plus", type=float, default=2.0)
    p.add_argument("--gamma-minus", type=float, default=2.0)
    p.add_argument("--mu-plus", type=float, default=1.0)
    p.add_argument("--mu-minus", type=float, default=1.0)
    p.add_argument("--lambda-plus", type=float, default=0.0)
    p.add_argument("--lambda-minus", type=float, default=0.0)


def _params(a, N=None):
    return ModelParams(N=N if N is not None else getattr(a, "dim", 2),
                       gamma_plus=a.gamma_plus, gamma_minus=a.gamma_minus,
                       mu_plus=a.mu_plus, mu_minus=a.mu_minus,
                       lambda_plus=a.lambda_plus, lambda_minus=a.lambda_minus)


def _writer(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def cmd_closure_eval(a):
    params = _params(a, 2)
    st = closure_state(a.r_plus, a.r_minus, params)
    out = {"params": params.to_dict(), "closure_state": st.to_dict(),
           "linear_coefficients": equilibrium_coefficients(params).to_dict()}
    print(json.dumps(out, indent=1))


def cmd_lp_norms(a):
    from .littlewood_paley import besov_norm, build_partition
    from .nonlinear_solver import read_snapshot

    state, _ = read_snapshot(a.input)
    part = build_partition(state.grid, a.j0)
    shells = ("low", part.j0) if a.band == "low" else ("high", part.j0) if a.band == "high" else None
    fh, close = _writer(a.output)
    w = csv.writer(fh)
    w.writerow(["s", "r", "norm"])
    for s in a.s:
        for r in a.r:
            w.writerow([s, "inf" if r == math.inf else r,
                        repr(besov_norm(state.stack(), s, r, part, shells))])
    if close:
        fh.close()


def cmd_linear_margin(a):
    from .linear_symbol import lyapunov_dissipation_margin, lyapunov_weights

    lo, hi = a.xi_range
    if not 0 < lo <= hi:
        raise DomainError("xi range must satisfy 0 < lo <= hi")
    coeffs = equilibrium_coefficients(_params(a))
    weights = lyapunov_weights(coeffs, a.delta)
    fh, close = _writer(a.output)
    w = csv.writer(fh)
    w.writerow(["xi", "margin"])
    for xi in np.geomspace(lo, hi, a.n):
        w.writerow([repr(float(xi)), repr(lyapunov_dissipation_margin(xi, coeffs, weights))])
    if close:
        fh.close()


def cmd_linear_decay(a):
    from .linear_symbol import flat_profile, semigroup_besov_decay

    coeffs = equilibrium_coefficients(_params(a))
    t0, t1, n = a.t_grid
    times = np.geomspace(t0, t1, int(n))
    fh, close = _writer(a.output)
    w = csv.writer(fh)
    w.writerow(["t", "s", "norm"])
    for s in a.s:
        res = semigroup_besov_decay(flat_profile(), s, times, a.dim, coeffs, q0=a.q0,
                                    components=a.components)
        for t, v in zip(times, res.norms):
            w.writerow([repr(float(t)), s, repr(float(v))])
    if close:
        fh.close()


def cmd_simulate(a):
    from .nonlinear_solver import load_config, simulate

    cfg, params, _ = load_config(a.config)
    if a.output_dir:
        cfg.output_dir = a.output_dir
    if not cfg.output_dir:
        raise ConfigurationError("output_dir must be set in the config or on the command line")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj = simulate(cfg, params)
    cols, data = [], []
    for s, r in cfg.norm_list:
        r = math.inf if r in ("inf", math.inf) else int(r)
        cols.append(f"B{s:g}_{'inf' if r == math.inf else r}")
        data.append(traj.besov_series(float(s), r))
    for (p, k), v in traj.lp.items():
        cols.append(f"L{'inf' if p == math.inf else f'{p:g}'}_k{k}")
        data.append(v)
    cols += ["mean_c_plus", "mean_c_minus"]
    data += [traj.means[:, 0], traj.means[:, 1]]
    with open(out / "norms.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + cols)
        for i, t in enumerate(traj.times):
            w.writerow([repr(float(t))] + [repr(float(d[i])) for d in data])
    print(json.dumps({"norms": str(out / "norms.csv"),
                      "snapshots": [str(s) for s in traj.snapshots], "steps": cfg.n_steps}))


def cmd_fit_decay(a):
    from .decay_harness import fit_power_law

    try:
        with open(a.input, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigurationError(f"cannot read {a.input}: {exc}") from exc
    if not rows or a.column not in rows[0] or a.time_column not in rows[0]:
        raise ConfigurationError(f"columns {a.time_column!r}/{a.column!r} not found in {a.input}")
    t = np.array([float(r[a.time_column]) for r in rows])
    v = np.array([float(r[a.column]) for r in rows])
    window = a.window if a.window else (t[t > 0].min(), t.max())
    fit = fit_power_law(t, v, window, a.theory, name=a.column)
    print(json.dumps(fit.to_dict(), indent=1))


def cmd_report(a):
    from .decay_harness import _read_config, emit_report, run_experiment

    cfg = _read_config(a.config)
    out = a.output_dir or cfg.get("output_dir")
    if not out:
        raise ConfigurationError("output_dir must be set in the config or on the command line")
    report = run_experiment(cfg)
    files = emit_report(report, out)
    print(json.dumps({"files": [str(f) for f in files],
                      "fits": [f.to_dict() for f in report.fits + report.lp_fits]}, indent=1))


def build_parser():
    ap = argparse.ArgumentParser(prog="twofluid", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("closure", help="pressure-equilibrium closure")
    s = p.add_subparsers(dest="action", required=True)
    q = s.add_parser("eval", help="closure state and equilibrium coefficients")
    _add_params(q, with_dim=False)
    q.add_argument("--r-plus", type=float, required=True)
    q.add_argument("--r-minus", type=float, required=True)
    q.set_defaults(func=cmd_closure_eval)

    p = sub.add_parser("lp", help="Littlewood-Paley norms of a snapshot")
    s = p.add_subparsers(dest="action", required=True)
    q = s.add_parser("norms", help="homogeneous Besov norms")
    q.add_argument("--input", required=True, help="snapshot path (.bin or .json)")
    q.add_argument("--s", type=_floats, default=[0.0], help="list of regularity indices")
    q.add_argument("--r", type=_summation, nargs="+", default=[1])
    q.add_argument("--band", choices=("all", "low", "high"), default="all")
    q.add_argument("--j0", type=int, default=None)
    q.add_argument("--output", default=None)
    q.set_defaults(func=cmd_lp_norms)

    p = sub.add_parser("linear", help="linearized symbol analysis")
    s = p.add_subparsers(dest="action", required=True)
    q = s.add_parser("margin", help="Lyapunov dissipation margin on a |xi| grid")
    _add_params(q)
    q.add_argument("--xi-range", type=float, nargs=2, default=(2.0**-8, 2.0**8))
    q.add_argument("--n", type=int, default=17)
    q.add_argument("--delta", type=float, default=None)
    q.add_argument("--output", default=None)
    q.set_defaults(func=cmd_linear_margin)
    q = s.add_parser("semigroup-decay", help="low-frequency Besov norms of the linear semigroup")
    _add_params(q)
    q.add_argument("--s", type=_floats, default=[0.0])
    q.add_argument("--t-grid", type=float, nargs=3, default=(1.0, 1e3, 31),
                   metavar=("T0", "T1", "N"))
    q.add_argument("--q0", type=int, default=0)
    q.add_argument("--components", choices=("all", "masses"), default="all")
    q.add_argument("--output", default=None)
    q.set_defaults(func=cmd_linear_decay)

    p = sub.add_parser("simulate", help="nonlinear pseudo-spectral run")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit-decay", help="power-law fit of a CSV column")
    p.add_argument("--input", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--time-column", default="t")
    p.add_argument("--window", type=float, nargs=2, default=None)
    p.add_argument("--theory", type=float, default=None)
    p.set_defaults(func=cmd_fit_decay)

    p = sub.add_parser("report", help="run a campaign and write report files")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        args.func(args)
    except (DomainError, ConfigurationError) as exc:
        print(f"twofluid: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalAbort, StateError, ConvergenceError) as exc:
        print(f"twofluid: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"twofluid: I/O error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
