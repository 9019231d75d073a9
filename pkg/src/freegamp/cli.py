"""Command line entry point (``freegamp``)."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import freeprob as fp
from .config import ConfigError, parse_config, with_overrides
from .dumps import read_dense, read_state
from .errors import DomainError, NumericError
from .harness import compare_strategies, run_experiment
from .oracle import check_fixed_point


def _omegas(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freegamp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, help="override the base seed")
    r.add_argument("--out-dir", help="override the output directory")
    r.add_argument("--strategy", action="append",
                   help="run this strategy instead of the configured list (repeatable)")

    c = sub.add_parser("check-identities", help="evaluate fixed-point residuals of a state dump")
    c.add_argument("state")
    c.add_argument("matrix")
    c.add_argument("--config", required=True, help="experiment config naming the channels")
    c.add_argument("--tol", type=float, default=1e-8, help="exit 1 if any residual exceeds this")

    s = sub.add_parser("spectrum", help="tabulate R-transforms of A^T A and A A^T")
    s.add_argument("matrix")
    s.add_argument("--omega", type=_omegas, default=[-0.25, -0.5, -1.0])
    s.add_argument("--export", help="write the A^T A spectrum as atom,weight CSV")
    for sp in (r, c, s):
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def cmd_run(args) -> int:
    cfg = with_overrides(parse_config(args.config), args.seed, args.out_dir, args.strategy)
    records = run_experiment(cfg)
    print(f"{'strategy':<16} {'trials':>6} {'mean dB':>9} {'median dB':>10} {'iters':>7} {'diverged':>9}")
    for row in compare_strategies(records):
        print(f"{row['strategy']:<16} {row['trials']:>6d} {row['mean_nmse_db']:>9.3f} "
              f"{row['median_nmse_db']:>10.3f} {row['mean_iterations']:>7.1f} "
              f"{row['divergence_rate']:>9.2f}")
    print(f"results in {cfg.output.dir}")
    return 0


def cmd_check(args) -> int:
    cfg = parse_config(args.config)
    A = read_dense(args.matrix)
    state, y = read_state(args.state, A.shape[1])
    rep = check_fixed_point(state, A, cfg.prior, cfg.likelihood, y)
    print(rep.to_text())
    return 0 if rep.max <= args.tol else 1


def cmd_spectrum(args) -> int:
    A = read_dense(args.matrix)
    N, K = A.shape
    alpha = N / K
    ata = fp.spectrum_of_symmetric(A.T @ A, tol=np.inf)
    aat = fp.spectrum_of_symmetric(A @ A.T, tol=np.inf)
    if args.export:
        ata.to_csv(args.export)
    print("omega,r_jz_numeric,r_jz_mp,r_jx_numeric,r_jx_mp")
    for w in args.omega:
        vals = [fp.r_transform_real(ata, w), _mp(fp.r_mp_jz, N, alpha, w),
                fp.r_transform_real(aat, w), _mp(fp.r_mp_jx, K, alpha, w)]
        print(",".join([repr(w)] + [repr(float(v)) for v in vals]))
    return 0


def _mp(fn, n, alpha, w):
    try:
        return fn(np.ones(n), alpha, w)
    except DomainError:
        return float("nan")


def _join_omega(argv):
    # "--omega -0.25,-0.5" would otherwise be read as an option
    out = list(argv)
    for i in range(len(out) - 1):
        if out[i] == "--omega" and out[i + 1].startswith("-"):
            out[i:i + 2] = [f"--omega={out[i + 1]}"]
            break
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(_join_omega(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "check-identities": cmd_check, "spectrum": cmd_spectrum}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, NumericError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
