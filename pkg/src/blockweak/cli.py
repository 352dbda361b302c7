"""Command-line front end.

Exit codes: 0 success (threshold computed, signal recovered, SUCCESS
verdict), 2 definite negative (not recovered, FAILURE verdict), 3 UNDECIDED,
1 usage or runtime error.  Machine-readable payloads go to stdout or
``--out``; a one-line human summary goes to stderr.
"""

import argparse
import json
import sys

import numpy as np

from . import __version__
from .certify import FAILURE, SUCCESS, certify
from .core import (BlockStructure, InstanceFormatError, RngSpec, deserialize_instance,
                   generate_instance, serialize_instance)
from .experiments import (ExperimentConfig, metadata_to_json, phase_metadata, phase_to_csv,
                          run_phase)
from .recovery import (DEFAULT_FEAS_TOL, DEFAULT_MAX_ITERS, DEFAULT_OBJ_TOL, DEFAULT_REC_TOL,
                       RankDeficientError, check_recovery, solve_group_bp)
from .thresholds import alpha_weak, curve_to_csv, finite_n_alpha_estimate, threshold_curve

EXIT_OK, EXIT_ERROR, EXIT_NEGATIVE, EXIT_UNDECIDED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _dump(doc):
    return json.dumps(doc, indent=2) + "\n"


def _emit(text, out=None):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _summary(msg):
    print(msg, file=sys.stderr)


def _read_instance(path):
    with open(path, encoding="utf-8") as fh:
        return deserialize_instance(fh.read())


def cmd_threshold(args):
    if args.d < 1:
        raise UsageError("--d must be >= 1")
    if not 0.0 < args.beta <= 1.0:
        raise UsageError("--beta must lie in (0, 1]")
    p = alpha_weak(args.beta, args.d)
    _emit(_dump({"d": p.d, "beta": p.beta, "theta_hat": p.theta_hat, "alpha_w": p.alpha_w}))
    _summary(f"d={p.d} beta={p.beta:g}: alpha_w={p.alpha_w:.6f} (theta_hat={p.theta_hat:.6f})")
    return EXIT_OK


def cmd_curve(args):
    if args.d < 1:
        raise UsageError("--d must be >= 1")
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if not 0.0 < args.beta_min < args.beta_max < 1.0:
        raise UsageError("need 0 < --beta-min < --beta-max < 1")
    grid = np.linspace(args.beta_min, args.beta_max, args.steps) if args.steps > 1 else [args.beta_min]
    pts = threshold_curve(args.d, grid)
    _emit(curve_to_csv(pts), args.out)
    _summary(f"wrote {len(pts)} curve points for d={args.d}")
    return EXIT_OK


def cmd_gen(args):
    try:
        s = BlockStructure(n=args.n, d=args.d, m=args.m, k=args.k)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if args.seed < 0:
        raise UsageError("--seed must be non-negative")
    inst = generate_instance(s, args.mag_low, args.mag_high, RngSpec(args.seed))
    _emit(serialize_instance(inst), args.out)
    _summary(f"generated n={s.n} d={s.d} m={s.m} k={s.k} seed={args.seed}")
    return EXIT_OK


def cmd_recover(args):
    inst = _read_instance(args.input)
    res = solve_group_bp(inst.A, inst.y, inst.structure.d, max_iters=args.max_iters)
    ok = res.converged and check_recovery(res, inst.x_true, args.tol)
    doc = {
        "x_hat": res.x_hat.tolist(),
        "objective": res.objective,
        "feas_residual": res.feas_residual,
        "iterations": res.iterations,
        "converged": res.converged,
        "recovered": ok,
        "settings": {"feas_tol": DEFAULT_FEAS_TOL, "obj_tol": DEFAULT_OBJ_TOL,
                     "max_iters": args.max_iters, "rec_tol": args.tol},
    }
    _emit(_dump(doc))
    _summary(f"{'recovered' if ok else 'NOT recovered'}: objective={res.objective:.6g} "
             f"iterations={res.iterations} converged={res.converged}")
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_certify(args):
    inst = _read_instance(args.input)
    cert = certify(inst.A, inst.support_array, inst.directions, inst.structure.d)
    _emit(_dump(cert.to_dict()))
    _summary(f"verdict={cert.verdict} tau={cert.tau_estimate:.6g}")
    return {SUCCESS: EXIT_OK, FAILURE: EXIT_NEGATIVE}.get(cert.verdict, EXIT_UNDECIDED)


def cmd_phase(args):
    if args.alpha_steps < 2:
        raise UsageError("--alpha-steps must be >= 2")
    if not 0.0 < args.alpha_min < args.alpha_max <= 1.0:
        raise UsageError("need 0 < --alpha-min < --alpha-max <= 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    grid = tuple(float(a) for a in np.linspace(args.alpha_min, args.alpha_max, args.alpha_steps))
    try:
        cfg = ExperimentConfig(d=args.d, n=args.n, beta=args.beta, alpha_grid=grid,
                               trials=args.trials, master_seed=args.seed, rec_tol=args.tol)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cells = run_phase(cfg, jobs=args.jobs)
    meta = phase_metadata(cfg, cells)
    _emit(phase_to_csv(cells), args.out)
    if args.out not in (None, "-"):
        _emit(metadata_to_json(meta), args.out + ".meta.json")
    _summary(f"{len(cells)} cells x {cfg.trials} trials; "
             f"nonconvergence={meta['nonconvergence_rate']:.4f} gate={meta['quality_gate']}")
    return EXIT_OK if meta["quality_gate"] == "pass" else EXIT_ERROR


def cmd_fgsample(args):
    if args.n < 1 or args.d < 1 or args.samples < 1:
        raise UsageError("--n, --d and --samples must be >= 1")
    if not 0.0 <= args.beta < 1.0:
        raise UsageError("--beta must lie in [0, 1)")
    k = int(round(args.beta * args.n))
    est = finite_n_alpha_estimate(args.n, k, args.d, args.samples, RngSpec(args.seed))
    est["seed"] = args.seed
    est["beta"] = k / args.n
    est["alpha_w"] = alpha_weak(k / args.n, args.d).alpha_w if k > 0 else 0.0
    _emit(_dump(est))
    _summary(f"finite-n estimate {est['mean']:.6f} +- {est['stddev']:.2g} "
             f"(asymptotic {est['alpha_w']:.6f})")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="blockweak", allow_abbrev=False,
                description="Weak thresholds and recovery checks for block-sparse l2/l1.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("threshold", help="one point of the weak-threshold curve", allow_abbrev=False)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--beta", type=float, required=True)
    s.set_defaults(func=cmd_threshold)

    s = sub.add_parser("curve", help="weak-threshold curve as CSV", allow_abbrev=False)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--beta-min", type=float, required=True)
    s.add_argument("--beta-max", type=float, required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_curve)

    s = sub.add_parser("gen", help="generate a random instance document", allow_abbrev=False)
    for flag in ("--n", "--d", "--m", "--k", "--seed"):
        s.add_argument(flag, type=int, required=True)
    s.add_argument("--mag-low", type=float, default=1.0)
    s.add_argument("--mag-high", type=float, default=2.0)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("recover", help="solve l2/l1 on an instance", allow_abbrev=False)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--tol", type=float, default=DEFAULT_REC_TOL)
    s.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
    s.set_defaults(func=cmd_recover)

    s = sub.add_parser("certify", help="null-space certificate for an instance", allow_abbrev=False)
    s.add_argument("--in", dest="input", required=True)
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("phase", help="Monte Carlo phase-transition sweep", allow_abbrev=False)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--alpha-min", type=float, required=True)
    s.add_argument("--alpha-max", type=float, required=True)
    s.add_argument("--alpha-steps", type=int, required=True)
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", default="-")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--tol", type=float, default=DEFAULT_REC_TOL)
    s.set_defaults(func=cmd_phase)

    s = sub.add_parser("fgsample", help="finite-n water-filling estimate", allow_abbrev=False)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.set_defaults(func=cmd_fgsample)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"blockweak {args.command}: error: {exc}", file=sys.stderr)
    except InstanceFormatError as exc:
        print(f"blockweak {args.command}: malformed instance: {exc}", file=sys.stderr)
    except (OSError, RankDeficientError, ValueError, RuntimeError) as exc:
        print(f"blockweak {args.command}: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
