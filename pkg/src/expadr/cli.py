"""Command line entry point: expadr <command> ...

Exit status 2 signals a validation mismatch; 1 signals an error.
EXPADR_THREADS sets the transform thread count.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from expadr.schemes import ORDERS, SCHEME_NAMES, scheme_spec

EXIT_OK, EXIT_ERROR, EXIT_MISMATCH = 0, 1, 2


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _names(text):
    names = [v.strip() for v in text.split(",") if v.strip()]
    for n in names:
        scheme_spec(n)
    return names


def cmd_stability(args):
    from expadr import stability

    if args.what == "thresholds":
        print("scheme,order,lambda")
        for spec, order, lam in stability.threshold_table(tol=args.tol):
            print(f"{spec.id},{order},{lam:.5f}")
        if args.optimize_alpha:
            alpha, lam = stability.optimize_alpha_sl2()
            print(f"# sl2 optimal alpha={alpha:.4f} lambda={lam:.5f}")
        return EXIT_OK
    if args.scheme is None or args.lam is None:
        raise SystemExit("stability region needs --scheme and --lam")
    raster = stability.astability_region(args.scheme, args.lam, args.window, args.resolution)
    if args.output:
        stability.write_pgm(args.output, raster)
    print(f"{int(raster.sum())} of {raster.size} pixels inside")
    return EXIT_OK


def cmd_validate(args):
    from expadr import bench

    if args.preset == "lin1d":
        res = bench.validate_thresholds("lin1d", n=args.n)
        print(res.table())
        for key in res.mismatches:
            print(f"# mismatch: {key[0]} at lambda={key[1]:.6g}")
        return EXIT_OK if res.ok else EXIT_MISMATCH
    schemes = args.schemes or [s for s in SCHEME_NAMES]
    out = bench.convergence_orders(schemes, n=args.n)
    bad = False
    print("scheme,order,slope")
    for s, (slope, _) in out.items():
        lo, hi = (0.9, 1.1) if ORDERS[s] == 1 else (1.8, 2.2)
        ok = lo <= slope <= hi
        bad |= not ok
        print(f"{s},{ORDERS[s]},{slope:.3f}{'' if ok else ',out of range'}")
    return EXIT_MISMATCH if bad else EXIT_OK


def cmd_bench(args):
    from expadr import bench

    over = {
        "preset": args.preset, "schemes": args.schemes, "steps": args.steps,
        "formulation": args.formulation, "backend": args.backend, "n": args.n,
        "b": args.b, "output": args.output, "repeat": args.repeat,
        "lam": None if args.lam is None else (float(args.lam) if _isnum(args.lam) else args.lam),
    }
    if args.config:
        cfg = bench.load_config(args.config, over)
    else:
        missing = [k for k in ("preset", "schemes", "steps") if not over[k]]
        if missing:
            raise SystemExit(f"bench needs --{' --'.join(missing)} or --config")
        cfg = bench.ExperimentConfig(**{k: v for k, v in over.items() if v is not None})
    records = bench.run_experiment(cfg)
    print(bench.summarize(records), end="")
    return EXIT_OK


def _isnum(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def cmd_tune(args):
    from expadr.presets import get_preset
    from expadr.tuner import default_lambda_grid, scan_lambda

    p = get_preset(args.preset, n=args.coarse_n, b=args.b)
    grid = default_lambda_grid(args.scheme, points=args.points)
    rep = scan_lambda(args.scheme, p.problem, p.grid, args.steps, lambda_grid=grid)
    print(rep.table())
    print(rep.summary())
    return EXIT_OK


def cmd_report(args):
    from expadr import bench

    print(bench.summarize(bench.parse_report(args.path)), end="")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="expadr", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    st = sub.add_parser("stability", help="linear stability thresholds and regions")
    st.add_argument("what", choices=("thresholds", "region"))
    st.add_argument("--tol", type=float, default=1e-4)
    st.add_argument("--optimize-alpha", action="store_true")
    st.add_argument("--scheme")
    st.add_argument("--lam", type=float)
    st.add_argument("--window", type=float, nargs=4, default=(-20.0, 5.0, -15.0, 15.0),
                    metavar=("RE_MIN", "RE_MAX", "IM_MIN", "IM_MAX"))
    st.add_argument("--resolution", type=int, nargs=2, default=(400, 300), metavar=("NX", "NY"))
    st.add_argument("--output")
    st.set_defaults(func=cmd_stability)

    va = sub.add_parser("validate", help="threshold classification or convergence orders")
    va.add_argument("--preset", choices=("lin1d", "nl1d"), required=True)
    va.add_argument("--n", type=int)
    va.add_argument("--schemes", type=_names)
    va.set_defaults(func=cmd_validate)

    be = sub.add_parser("bench", help="error and wall-time run matrix")
    be.add_argument("--config")
    be.add_argument("--preset")
    be.add_argument("--b", type=float)
    be.add_argument("--schemes", type=_names)
    be.add_argument("--steps", type=_ints)
    be.add_argument("--formulation", choices=("accelerated", "original"))
    be.add_argument("--backend", choices=("fourier", "kron", "dense", "krylov"))
    be.add_argument("--n", type=int)
    be.add_argument("--lam", help="threshold, tuned, or a number")
    be.add_argument("--repeat", type=int)
    be.add_argument("--output")
    be.set_defaults(func=cmd_bench)

    tu = sub.add_parser("tune-lambda", help="coarse-grid lambda scan")
    tu.add_argument("--scheme", required=True)
    tu.add_argument("--preset", required=True)
    tu.add_argument("--b", type=float)
    tu.add_argument("--coarse-n", type=int, default=64)
    tu.add_argument("--steps", type=int, default=256)
    tu.add_argument("--points", type=int, default=20)
    tu.set_defaults(func=cmd_tune)

    rp = sub.add_parser("report", help="summarize a CSV report")
    rp.add_argument("path")
    rp.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # reported, not re-raised: the exit code carries it
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
