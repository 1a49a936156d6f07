"""Regenerate the committed reference trace of the affine-zero instance.

The acceptance suite checks that the solver never needs more iterations on
this instance than the reference records.  Regenerate only on purpose.
"""
from pathlib import Path

from hybridproj.harness import load_experiment, run_experiment

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    spec = load_experiment(ROOT / "experiments" / "affine_zero.json")
    out = ROOT / "tests" / "data" / "affine_zero_reference.csv"
    res, _, code, _ = run_experiment(spec, trace_path=out)
    print(f"wrote {out} ({res.iterations} iterations, exit {code})")
