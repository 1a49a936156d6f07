"""Generate seeded instances for a template and run each one.

    python scripts/sweep_generated.py full-theorem1 --seeds 20
    python scripts/sweep_generated.py two-ep --space lp --p 1.5 --seeds 3
"""
import argparse
import time

from hybridproj.harness import (TEMPLATES, dump_instance, generate_instance, parse_experiment,
                               run_experiment)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("template", choices=TEMPLATES)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--space", choices=("hilbert", "lp"), default="hilbert")
    ap.add_argument("--p", type=float, default=1.5)
    ap.add_argument("--dim", type=int, default=5)
    args = ap.parse_args()

    print(f"{'seed':>4} {'termination':>12} {'iters':>6} {'inv':>4} {'oracle':>18} "
          f"{'dist':>9} {'max_res':>9} {'sec':>6}")
    total = time.perf_counter()
    for seed in range(args.seeds):
        doc = generate_instance(seed, args.template, dim=args.dim, space=args.space, p=args.p)
        spec = parse_experiment(dump_instance(doc), f"seed{seed}")
        t = time.perf_counter()
        res, orc, _, _ = run_experiment(spec, write=False)
        dist = f"{orc.distance:.2e}" if orc.distance is not None else "-"
        print(f"{seed:>4} {res.termination:>12} {res.iterations:>6} {int(res.invariants_ok):>4} "
              f"{orc.method or '-':>18} {dist:>9} {max(res.residuals.values()):9.2e} "
              f"{time.perf_counter() - t:6.2f}")
    print(f"total {time.perf_counter() - total:.1f}s")


if __name__ == "__main__":
    main()
