"""Command-line entry point: ``cipt test`` and ``cipt experiment``."""

from __future__ import annotations

import argparse
import json
import sys

from .core import AxisSpec, DataError, infer_axis_spec, read_csv_rows, validate_dataset
from .harness import EXPERIMENTS, M_RULES, ExperimentConfig, run_experiment, write_csv
from .permutation import TestConfig, run_test

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


def _int_list(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _float_list(s: str) -> list[float]:
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _str_list(s: str) -> list[str]:
    return [v.strip() for v in s.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cipt", description="Local permutation tests of X independent of Y given Z.")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test a CSV file with columns x,y,z")
    t.add_argument("--input", required=True, help="CSV file with an x,y,z header")
    t.add_argument("--x-type", choices=("cat", "real"), default="cat")
    t.add_argument("--y-type", choices=("cat", "real"), default="cat")
    t.add_argument("--z-type", choices=("real", "cat"), default="real",
                   help="cat treats each z label as its own bin")
    t.add_argument("--bins", type=int, required=True, help="number of equal-width z bins M")
    t.add_argument("--sub-bins", type=int, default=None, help="sub-bins per bin (double binning)")
    t.add_argument("--stat", choices=("ustat", "weighted"), default="ustat")
    t.add_argument("--perm", choices=("full", "half", "cyclic"), default="full")
    t.add_argument("--B", type=int, default=100, help="number of permutations")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--poissonize", choices=("half", "full"), default=None)
    t.add_argument("--holder-s", type=float, default=None,
                   help="smoothness exponent s for discretising real X/Y into ceil(M^(1/s)) levels")
    t.add_argument("--overflow", action="store_true", help="collect z outside [0, 1] in an extra bin")
    t.add_argument("--exact", action="store_true", help="enumerate every local permutation")
    t.add_argument("--randomized", action="store_true", help="randomised decision at exact level")
    t.add_argument("--json", action="store_true", help="print the outcome as JSON")

    e = sub.add_parser("experiment", help="run a simulation sweep and write a CSV table")
    e.add_argument("name", choices=[x.replace("_", "-") for x in EXPERIMENTS])
    e.add_argument("--config", default=None, help="JSON file with experiment settings")
    e.add_argument("--n", type=_int_list, default=None)
    mg = e.add_mutually_exclusive_group()
    mg.add_argument("--m", type=_int_list, default=None)
    mg.add_argument("--m-rule", type=_str_list, default=None,
                    help="comma-separated rules from: " + ", ".join(M_RULES))
    e.add_argument("--b", type=int, default=None)
    e.add_argument("--theta", type=_float_list, default=None)
    e.add_argument("--stat", choices=("ustat", "weighted"), default=None)
    e.add_argument("--perm", choices=("full", "half"), default=None)
    e.add_argument("--methods", type=_str_list, default=None)
    e.add_argument("--poisson", type=_str_list, default=None)
    e.add_argument("--B", type=int, default=None)
    e.add_argument("--alpha", type=float, default=None)
    e.add_argument("--reps", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--workers", type=int, default=None)
    e.add_argument("--out", required=True)
    return parser


def _cmd_test(args, parser) -> int:
    try:
        config = TestConfig(bins=args.bins, sub_bins=args.sub_bins, stat=args.stat, perm=args.perm,
                            B=args.B, alpha=args.alpha, poisson=args.poissonize,
                            holder_s=args.holder_s, overflow=args.overflow,
                            calibration="exact" if args.exact else "mc",
                            randomized=args.randomized)
    except ValueError as exc:
        parser.error(str(exc))
    try:
        rows = read_csv_rows(args.input)
        xs = infer_axis_spec([r[0] for r in rows], args.x_type)
        ys = infer_axis_spec([r[1] for r in rows], args.y_type)
        z_kind = "categorical" if args.z_type == "cat" else "real"
        ds = validate_dataset(rows, xs, ys, z_kind, overflow=args.overflow)
        out = run_test(ds, config, args.seed)
    except (DataError, OSError) as exc:
        print(f"cipt: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"cipt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.json:
        print(json.dumps({"statistic": out.statistic, "p_value": out.p_value,
                          "decision": out.decision, "reject_probability": out.reject_probability,
                          "n_used": out.n_used, "poisson_truncated": out.poisson_truncated,
                          "exhaustive": out.exhaustive, "seed": out.seed, "config": out.config}))
    else:
        print(f"statistic: {out.statistic:.10g}")
        print(f"p_value: {out.p_value:.6g}")
        print(f"decision: {out.decision}")
        if args.randomized:
            print(f"reject_probability: {out.reject_probability:.6g}")
        if out.poisson_truncated:
            print("note: Poisson sample size exceeded n; the null is accepted")
    return EXIT_OK


def _cmd_experiment(args, parser) -> int:
    try:
        base = {}
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                base = json.load(fh)
        base["experiment"] = args.name
        for key in ("n", "m", "m_rule", "b", "theta", "stat", "perm", "methods", "poisson", "B",
                    "alpha", "reps", "seed", "workers"):
            v = getattr(args, key)
            if v is not None:
                base[key] = v
        if args.m is not None:
            base.pop("m_rule", None)
        if args.m_rule is not None:
            base.pop("m", None)
        cfg = ExperimentConfig.from_dict(base)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cipt: error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, TypeError, KeyError) as exc:
        parser.error(str(exc))
    try:
        rows = run_experiment(cfg)
        write_csv(rows, args.out)
    except DataError as exc:
        print(f"cipt: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"cipt: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for row in rows:
        th = "" if row.theta is None else f" theta={row.theta:g}"
        print(f"{row.experiment} n={row.n} M={row.M}{th} {row.perm_mode}/{row.poisson}: "
              f"rate={row.rejection_rate:.4f} se={row.se:.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        if args.command == "test":
            return _cmd_test(args, parser)
        return _cmd_experiment(args, parser)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
