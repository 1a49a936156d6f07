"""Command-line entry point ``hybridproj``.

Verbs::

    hybridproj run FILE [FILE ...] [--jobs N] [--tol T] [--max-iters N] [--trace PATH] [--quiet]
    hybridproj gen --template NAME --seed S [--out FILE] [--dim N] [--space hilbert|lp] [--p P]
    hybridproj verify FILE [FILE ...]
    hybridproj props --module NAME|all

Exit codes: 0 success, 1 a property suite failed, 2 validation error,
3 solver failure.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .geometry import ConfigurationError
from .harness import (TEMPLATES, ValidationError, dump_instance, generate_instance,
                      load_experiment, run_experiment)
from .sets import ProjectionError

EXIT_OK, EXIT_PROPS, EXIT_VALIDATION, EXIT_SOLVER = 0, 1, 2, 3


def _trace_target(trace: Optional[str], path: str, many: bool) -> Optional[str]:
    if trace is None:
        return None
    if not many:
        return trace
    out = Path(trace)
    out.mkdir(parents=True, exist_ok=True)
    return str(out / (Path(path).stem + ".csv"))


def _run_one(job: Tuple[str, Optional[float], Optional[int], Optional[str]]):
    """Run one problem file; returns ``(exit_code, stdout_text, stderr_text)``."""
    path, tol, max_iters, trace = job
    try:
        spec = load_experiment(path)
    except ValidationError as exc:
        return EXIT_VALIDATION, "", f"error: {exc}\n"
    if tol is not None:
        if not tol > 0:
            return EXIT_VALIDATION, "", f"error: {path}:0: --tol must be positive\n"
        spec.config.tol = tol
    if max_iters is not None:
        if max_iters < 1:
            return EXIT_VALIDATION, "", f"error: {path}:0: --max-iters must be at least 1\n"
        spec.config.max_iters = max_iters
    try:
        _, _, code, summary = run_experiment(spec, trace_path=trace)
    except ConfigurationError as exc:
        return EXIT_VALIDATION, "", f"error: {path}:0: {exc}\n"
    except (ProjectionError, RuntimeError, ArithmeticError) as exc:
        return EXIT_SOLVER, "", f"error: {path}: solver failure: {exc}\n"
    err = "" if code == 0 else f"error: {path}: run did not converge cleanly (exit {code})\n"
    return code, summary, err


def cmd_run(args) -> int:
    many = len(args.files) > 1
    jobs = [(f, args.tol, args.max_iters, _trace_target(args.trace, f, many))
            for f in args.files]
    if args.jobs > 1 and many:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(j) for j in jobs]
    worst = EXIT_OK
    for (path, *_), (code, out, err) in zip(jobs, outcomes):
        if out and not args.quiet:
            if many:
                sys.stdout.write(f"# {path}\n")
            sys.stdout.write(out)
        if err:
            sys.stderr.write(err)
        worst = max(worst, code)
    return worst


def cmd_gen(args) -> int:
    try:
        doc = generate_instance(args.seed, args.template, dim=args.dim, space=args.space,
                                p=args.p)
    except (ValueError, ConfigurationError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    text = dump_instance(doc)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
        if not args.quiet:
            sys.stdout.write(f"wrote {args.out}\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    worst = EXIT_OK
    for path in args.files:
        try:
            spec = load_experiment(path)
        except ValidationError as exc:
            sys.stderr.write(f"error: {exc}\n")
            worst = EXIT_VALIDATION
            continue
        inst = spec.instance
        if not args.quiet:
            sys.stdout.write(f"ok {path}: runner={spec.runner} dim={inst.space.dim} "
                             f"d={inst.d} m={inst.m} q={inst.q}\n")
    return worst


def cmd_props(args) -> int:
    from .properties import SUITES, resolve_module, run_suite

    names = list(SUITES) if args.module == "all" else [args.module]
    try:
        names = [resolve_module(n) for n in names]
    except KeyError as exc:
        sys.stderr.write(f"error: {exc.args[0]}\n")
        return EXIT_VALIDATION
    failed = 0
    for name in names:
        for res in run_suite(name, seed=args.seed):
            failed += not res.ok
            if not args.quiet or not res.ok:
                sys.stdout.write(res.line() + "\n")
    return EXIT_PROPS if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridproj",
                                 description="Hybrid shrinking-projection experiments.")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--quiet", action="store_true", help="print errors only")

    p = sub.add_parser("run", help="run one or more problem files")
    p.add_argument("files", nargs="+")
    p.add_argument("--tol", type=float, default=None, help="outer tolerance override")
    p.add_argument("--max-iters", type=int, default=None, help="iteration cap override")
    p.add_argument("--trace", default=None,
                   help="trace CSV path (a directory when several files are given)")
    p.add_argument("--jobs", type=int, default=1, help="run files in parallel processes")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gen", help="generate a random instance with a planted solution")
    p.add_argument("--template", required=True, choices=TEMPLATES)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--space", choices=("hilbert", "lp"), default="hilbert")
    p.add_argument("--p", type=float, default=1.5, help="exponent for --space lp")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("verify", help="load and validate problem files without running")
    p.add_argument("files", nargs="+")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("props", help="run a module property suite")
    p.add_argument("--module", required=True,
                   help="space-geometry, convex-sets, operator-catalog, resolvent, "
                        "hybrid-solver, harness-cli or all")
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_props)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
