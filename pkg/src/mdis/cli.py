"""Command-line entry point: ``python -m mdis <verb> ...``.

Verbs
-----
constants           homogenization constants L, L_hat, kappa
verify-subsolution  numerical subsolution check (exit 1 on failure)
run                 one experiment, optionally appended to a CSV file
table               a reference table layout or a rows file

Exit status: 0 success, 1 validation or verification failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import control as ctl
from . import experiments as ex
from .averaging import rough_potential_constants
from .model import ParameterError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def _add_experiment_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--h-exponent", type=float, help="a in h(eps) = eps**-a")
    p.add_argument("--regime", type=int, choices=(1, 2))
    p.add_argument("--d", dest="D", type=float, help="diffusivity D (default 1)")
    p.add_argument("--t-final", dest="T", type=float, help="horizon T (default 1)")
    p.add_argument("--x0", type=float)
    p.add_argument("--y0", type=float)
    p.add_argument("--gamma", dest="gamma_target", type=float, help="example 1 target in H(eta) = (eta - gamma)^2")
    p.add_argument("--variant", help="subsolution variant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdis", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("constants", help="print L, L_hat and kappa for the rough potential")
    p.add_argument("--d", dest="D", type=float, required=True)
    p.add_argument("--nodes", type=int, default=4096, help="Simpson subintervals (even)")

    p = sub.add_parser("verify-subsolution", help="check the subsolution inequality on a grid")
    p.add_argument("--example", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--t-points", type=int, default=201)
    p.add_argument("--eta-points", type=int, default=201)
    p.add_argument("--eta-max", type=float, default=10.0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--terminal-tol", type=float, default=1e-10)
    _add_experiment_options(p)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", help="flat key=value file; command-line options override it")
    p.add_argument("--example", type=int, choices=(1, 2, 3))
    p.add_argument("--method", choices=ex.METHODS)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--seed", dest="base_seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", dest="out_path")
    p.add_argument("--paper-scale", action="store_true", help="use the reference sample size")
    _add_experiment_options(p)

    p = sub.add_parser("table", help="run a table of (epsilon, delta) rows")
    p.add_argument("--example", type=int, choices=(1, 2, 3))
    p.add_argument("--rows", required=True,
                   help=f"a file of 'epsilon delta' lines or one of {sorted(ex.TABLE_SCHEDULES)}")
    p.add_argument("--methods", help="comma-separated subset of nmc,md,ld (default: the table's)")
    p.add_argument("--max-rows", type=int, help="only the first k rows")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--seed", dest="base_seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", dest="out_path")
    p.add_argument("--paper-scale", action="store_true")
    _add_experiment_options(p)
    return parser


def _overrides(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


_EXPERIMENT_KEYS = ("h_exponent", "regime", "D", "T", "x0", "y0", "gamma_target", "variant")


def cmd_constants(args) -> int:
    c = rough_potential_constants(args.D, args.nodes)
    print(f"D = {c.D:g}, {c.n_nodes} Simpson subintervals")
    print(f"L      = {c.L:.6f}")
    print(f"L_hat  = {c.L_hat:.6f}")
    print(f"kappa  = {c.kappa_hom:.6f}  (4 pi^2 / (L L_hat))")
    print(f"L={c.L:.10f}")
    print(f"L_hat={c.L_hat:.10f}")
    print(f"kappa={c.kappa_hom:.10f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    method = "md"
    cfg = ex.make_config(args.example, method, args.epsilon, args.delta, n_samples=2,
                         **_overrides(args, _EXPERIMENT_KEYS))
    exp = ex.build_experiment(cfg)
    t = np.linspace(0.0, cfg.T, args.t_points)
    eta = np.linspace(-args.eta_max, args.eta_max, args.eta_points)
    report = ctl.verify_subsolution(exp.subsolution, exp.hjb, t, eta, tol=args.tol,
                                    terminal_tol=args.terminal_tol)
    print(f"example={cfg.example_id}")
    print(f"variant={exp.variant}")
    print(f"beta={exp.scaling.beta:.17g}")
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_run(args) -> int:
    values = ex.read_config_file(args.config) if args.config else {}
    cli_values = _overrides(args, ("method", "epsilon", "delta", "n_samples", "base_seed", "workers",
                                   "out_path") + _EXPERIMENT_KEYS)
    if args.example is not None:
        cli_values["example_id"] = args.example
    values.update(cli_values)
    cfg = ex.config_from_mapping(values, paper_scale=args.paper_scale)
    out, row = ex.run_experiment(cfg)
    if out.n_blowups:
        print(f"warning: {out.n_blowups} trajectories blew up", file=sys.stderr)
    return EXIT_OK


def cmd_table(args) -> int:
    if args.rows in ex.TABLE_SCHEDULES:
        sched = ex.TABLE_SCHEDULES[args.rows]
        if args.example is not None and args.example != sched.example_id:
            raise ex.ConfigError(f"{args.rows} belongs to example {sched.example_id}")
        example_id, rows, methods = sched.example_id, list(sched.rows), list(sched.methods)
        regime = sched.regime
    else:
        if args.example is None:
            raise ex.ConfigError("--example is required with a rows file")
        example_id, rows = args.example, ex.read_rows_file(args.rows)
        methods = ["nmc", "md"] + (["ld"] if args.example == 3 else [])
        regime = None
    if args.methods is not None:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.max_rows is not None:
        rows = rows[: args.max_rows]
    overrides = _overrides(args, ("workers",) + _EXPERIMENT_KEYS)
    if regime is not None:
        overrides.setdefault("regime", regime)
    n = args.n_samples
    if n is None and args.paper_scale:
        n = ex.PAPER_SAMPLES[example_id]
    results = ex.run_table(example_id, rows, methods, n_samples=n, base_seed=args.base_seed,
                           out_path=args.out_path, **overrides)
    return EXIT_RUNTIME if any(r["error"] for r in results) else EXIT_OK


_COMMANDS = {"constants": cmd_constants, "verify-subsolution": cmd_verify, "run": cmd_run, "table": cmd_table}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except (ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ArithmeticError, RuntimeError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
