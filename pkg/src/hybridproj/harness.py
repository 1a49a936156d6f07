"""Problem files, experiment execution, oracles and instance generation.

A problem file is a JSON document::

    {
      "space":     {"kind": "hilbert", "dim": 5}            # or {"kind": "lp", "p": 1.5, ...}
      "set":       {"type": "box", "lower": [...], "upper": [...]}
      "families":  {"T": [...], "A": [...], "eq": [{"f": {...}, "B": {...}}, ...]},
      "schedules": {"alpha": {"const": 0.5}, "lambda": {...}, "r": {...}, "beta": [...]},
      "runner":    "theorem1",
      "config":    {"tol": 1e-6, "max_iters": 10000, "seed": 0, "invariant_checks": true},
      "x0": [...],
      "known_common_solution": [...],                       # optional
      "outputs":   {"trace_path": "...", "summary_path": "..."},  # optional
      "baseline":  {"u": [...], "anchor_weight": {...}, "inertia": {...}},  # baseline9 only
      "test_hooks": {"inject_cut": 3}                       # optional
    }

Matrices are row-major nested lists.  A schedule is ``{"const": v}``,
``{"list": [...]}`` (extended by its last value) or ``{"harmonic": c}``
meaning ``c / (n + 2)``.  Infinite box bounds are written as ``null``.
"""
from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .geometry import ConfigurationError, SpaceSpec, _pnorm, lyapunov_phi
from .operators import (Averaged, Bifunction, EuclideanProjection, FixedPointMap,
                        GeneralizedProjection, Identity, IsmOperator, MonotoneMap,
                        ResolventOf)
from .sets import (Affine, Ball, Box, ConvexSet, Halfspace, InfeasibleError, Intersection,
                   WholeSpace, gen_project, metric_project)
from .solver import (ProblemInstance, Schedule, SolverConfig, SolverResult, gep_residual,
                     run_baseline_iiduka_takahashi, run_baseline_takahashi_toyoda,
                     run_hilbert_corollaries, run_theorem1, run_theorem2, run_theorem4)

__all__ = [
    "ValidationError",
    "ExperimentSpec",
    "OracleReport",
    "load_experiment",
    "parse_experiment",
    "run_experiment",
    "generate_instance",
    "instance_to_json",
    "set_to_json",
    "compute_oracle",
    "dump_instance",
    "TRACE_HEADER",
    "RUNNERS",
    "TEMPLATES",
]

RUNNERS = ("theorem1", "theorem2", "theorem4", "corollary41", "corollary42",
           "corollary43", "corollary44", "baseline8", "baseline9")
TEMPLATES = ("two-ep", "two-vi", "fp-only", "full-theorem1", "multi-q")
TRACE_HEADER = ["n", "x", "phi_x0", "step_norm", "max_T_residual", "max_A_residual",
                "max_gep_residual", "cut_feasible", "invariants_ok"]


class ValidationError(ValueError):
    """A problem file failed to parse or violates an instance condition."""


# ---------------------------------------------------------------------------
# JSON <-> objects


def _arr(v, what):
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ValueError(f"{what} must be numeric")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} must be finite")
    return a


def _bound(v, sign):
    return np.array([sign * np.inf if t is None else float(t) for t in v])


def set_from_json(d: dict) -> ConvexSet:
    t = d.get("type")
    if t == "box":
        return Box(_bound(d["lower"], -1), _bound(d["upper"], 1))
    if t == "ball":
        return Ball(_arr(d["center"], "ball center"), float(d["radius"]))
    if t == "halfspace":
        return Halfspace(_arr(d["a"], "halfspace normal"), float(d["b"]))
    if t == "affine":
        return Affine(np.atleast_2d(_arr(d["A"], "affine matrix")), _arr(d["b"], "affine rhs"))
    if t == "whole":
        return WholeSpace(int(d["dim"]))
    if t == "intersection":
        return Intersection(tuple(set_from_json(s) for s in d["sets"]))
    raise ValueError(f"unknown set type {t!r}")


def _num_list(a):
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(a).ravel()]


def set_to_json(s: ConvexSet) -> dict:
    if isinstance(s, Box):
        return {"type": "box", "lower": _num_list(s.lower), "upper": _num_list(s.upper)}
    if isinstance(s, Ball):
        return {"type": "ball", "center": s.center.tolist(), "radius": s.radius}
    if isinstance(s, Halfspace):
        return {"type": "halfspace", "a": s.a.tolist(), "b": s.b}
    if isinstance(s, Affine):
        return {"type": "affine", "A": s.A.tolist(), "b": s.b.tolist()}
    if isinstance(s, WholeSpace):
        return {"type": "whole", "dim": s.dim}
    if isinstance(s, Intersection):
        return {"type": "intersection", "sets": [set_to_json(m) for m in s.sets]}
    raise TypeError(f"cannot serialize {type(s).__name__}")


def monotone_from_json(d: dict, dim: int) -> MonotoneMap:
    t = d.get("type")
    if t == "zero":
        return MonotoneMap.zero(dim)
    if t == "affine":
        Q = np.atleast_2d(_arr(d["Q"], "map matrix"))
        q = _arr(d.get("q", [0.0] * Q.shape[0]), "map offset")
        return MonotoneMap.affine(Q, q)
    if t == "quadratic_gradient":
        return MonotoneMap.quadratic_gradient(_arr(d["H"], "Hessian"), _arr(d["a"], "centre"))
    raise ValueError(f"unknown monotone map type {t!r}")


def bifunction_from_json(d: dict, dim: int) -> Bifunction:
    t = d.get("type")
    if t == "zero":
        return Bifunction.zero(dim)
    if t == "vi":
        return Bifunction.vi(monotone_from_json(d["map"], dim))
    if t == "separable":
        return Bifunction.separable(_arr(d["H"], "Hessian"), _arr(d["a"], "centre"))
    raise ValueError(f"unknown bifunction type {t!r}")


def fixed_point_map_from_json(d: dict, dim: int) -> FixedPointMap:
    t = d.get("type")
    if t == "identity":
        return Identity(dim)
    if t == "projection":
        return EuclideanProjection(set_from_json(d["set"]))
    if t == "gen_projection":
        return GeneralizedProjection(set_from_json(d["set"]))
    if t == "averaged":
        return Averaged(float(d["t"]), fixed_point_map_from_json(d["inner"], dim))
    if t == "resolvent":
        return ResolventOf(monotone_from_json(d["map"], dim), float(d["r"]))
    raise ValueError(f"unknown fixed-point map type {t!r}")


def schedule_from_json(d) -> Schedule:
    if isinstance(d, (int, float)):
        return Schedule.constant(float(d))
    if "const" in d:
        return Schedule.constant(float(d["const"]))
    if "list" in d:
        return Schedule.from_list([float(v) for v in d["list"]])
    if "harmonic" in d:
        c = float(d["harmonic"])
        return Schedule(fn=lambda n, c=c: c / (n + 2.0))
    raise ValueError("a schedule is {'const': v}, {'list': [...]} or {'harmonic': c}")


def schedule_to_json(s: Schedule) -> dict:
    return s.to_json()


# ---------------------------------------------------------------------------
# experiment specs


@dataclass
class ExperimentSpec:
    instance: ProblemInstance
    runner: str
    config: SolverConfig
    seed: int = 0
    trace_path: Optional[str] = None
    summary_path: Optional[str] = None
    baseline_u: Optional[np.ndarray] = None
    baseline_anchor_weight: Optional[Schedule] = None
    baseline_inertia: Optional[Schedule] = None
    source: Optional[str] = None


def _line_of(text: str, keys: List[str]) -> int:
    """Line of the last key in ``keys``, searched in order through ``text``."""
    pos = 0
    for k in keys:
        m = re.compile(r'"%s"\s*:' % re.escape(k)).search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def _fail(text, src, keys, msg):
    line = _line_of(text, keys) if text is not None else 0
    raise ValidationError(f"{src}:{line}: {msg}")


def parse_experiment(text: str, source: str = "<string>") -> ExperimentSpec:
    """Parse and fully validate a problem document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{source}:{exc.lineno}: JSON parse error: {exc.msg} "
                              f"(column {exc.colno})")
    if not isinstance(doc, dict):
        raise ValidationError(f"{source}:1: top level must be a JSON object")
    for key in ("space", "set", "families", "x0"):
        if key not in doc:
            raise ValidationError(f"{source}:1: missing top-level key {key!r}")

    def guard(keys, fn):
        try:
            return fn()
        except ValidationError:
            raise
        except (ConfigurationError, ValueError, KeyError, TypeError) as exc:
            msg = f"missing key {exc}" if isinstance(exc, KeyError) else str(exc)
            _fail(text, source, keys, msg)

    sd = doc["space"]
    space = guard(["space"], lambda: SpaceSpec(sd["kind"], sd["dim"], sd.get("p", 2.0),
                                               sd.get("c")))
    n = space.dim
    C = guard(["set"], lambda: set_from_json(doc["set"]))
    if C.dim != n:
        _fail(text, source, ["set"], f"set dimension {C.dim} differs from space dimension {n}")
    fam = doc["families"]
    T = [guard(["families", "T"], lambda d=d: fixed_point_map_from_json(d, n))
         for d in fam.get("T", [{"type": "identity"}])]
    A = []
    for d in fam.get("A", []):
        A.append(guard(["families", "A"], lambda d=d: IsmOperator(
            monotone_from_json(d["map"], n), d.get("gamma"))))
    eq = []
    for d in fam.get("eq", []):
        f = guard(["families", "eq", "f"], lambda d=d: bifunction_from_json(d.get("f", {"type": "zero"}), n))
        B = guard(["families", "eq", "B"], lambda d=d: monotone_from_json(d.get("B", {"type": "zero"}), n))
        eq.append((f, B))
    if not eq:
        eq = [(Bifunction.zero(n), MonotoneMap.zero(n))] * 2

    sch = doc.get("schedules", {})
    alpha = guard(["schedules", "alpha"], lambda: schedule_from_json(sch["alpha"])) \
        if "alpha" in sch else None
    lam = guard(["schedules", "lambda"], lambda: schedule_from_json(sch["lambda"])) \
        if "lambda" in sch else None
    r = guard(["schedules", "r"], lambda: schedule_from_json(sch["r"])) if "r" in sch else None
    beta = sch.get("beta")
    x0 = guard(["x0"], lambda: _arr(doc["x0"], "x0"))
    pstar = doc.get("known_common_solution")
    pstar = guard(["known_common_solution"], lambda: _arr(pstar, "known_common_solution")) \
        if pstar is not None else None

    def build():
        return ProblemInstance(space, C, T, A, eq, x0, beta=beta, alpha=alpha, lam=lam, r=r,
                               known_common_solution=pstar)

    try:
        inst = build()
    except (ConfigurationError, ValueError, TypeError) as exc:
        msg = str(exc)
        keys = ["x0"]
        if "lambda" in msg:
            keys = ["schedules", "lambda"] if "lambda" in sch else ["families", "A"]
        elif "beta" in msg:
            keys = ["schedules", "beta"]
        elif "alpha" in msg:
            keys = ["schedules", "alpha"]
        elif "r schedule" in msg:
            keys = ["schedules", "r"]
        elif "known_common_solution" in msg:
            keys = ["known_common_solution"]
        elif "2-uniformly convex" in msg:
            keys = ["space"]
        _fail(text, source, keys, msg)

    runner = doc.get("runner", "theorem1" if inst.m else "theorem2")
    if runner not in RUNNERS:
        _fail(text, source, ["runner"], f"unknown runner {runner!r}; choose from {', '.join(RUNNERS)}")
    _check_runner(text, source, runner, inst)

    cfgd = doc.get("config", {})
    hooks = doc.get("test_hooks", {})
    cfg = guard(["config"], lambda: SolverConfig(
        tol=float(cfgd.get("tol", 1e-6)), max_iters=int(cfgd.get("max_iters", 10000)),
        invariant_checks=bool(cfgd.get("invariant_checks", True)),
        inject_cut=hooks.get("inject_cut")))
    if not cfg.tol > 0 or cfg.max_iters < 1:
        _fail(text, source, ["config"], "tol must be positive and max_iters at least 1")
    outs = doc.get("outputs", {})
    spec = ExperimentSpec(inst, runner, cfg, int(cfgd.get("seed", 0)),
                          outs.get("trace_path"), outs.get("summary_path"), source=source)
    if runner == "baseline9":
        bd = doc.get("baseline")
        if bd is None or "u" not in bd:
            _fail(text, source, ["runner"], "baseline9 needs a 'baseline' block with anchor 'u'")
        spec.baseline_u = guard(["baseline", "u"], lambda: _arr(bd["u"], "baseline anchor"))
        spec.baseline_anchor_weight = guard(["baseline", "anchor_weight"], lambda: schedule_from_json(
            bd.get("anchor_weight", {"harmonic": 1.0})))
        spec.baseline_inertia = guard(["baseline", "inertia"], lambda: schedule_from_json(
            bd.get("inertia", {"const": 0.25})))
    return spec


def _check_runner(text, source, runner, inst: ProblemInstance):
    def bad(msg):
        _fail(text, source, ["runner"], f"runner {runner} incompatible with instance: {msg}")

    if runner in ("theorem1", "theorem2") and inst.q != 2:
        bad("needs exactly two (f, B) pairs")
    if runner == "theorem2" and inst.m:
        bad("requires an empty A family")
    if runner.startswith("corollary"):
        which = int(runner[-2:])
        if not inst.space.is_hilbert:
            bad("corollary runners are Hilbert-space only")
        if inst.q != 2:
            bad("needs exactly two (f, B) pairs")
        if which >= 42 and inst.m:
            bad("requires an empty A family")
        if which == 43 and any(f.kind != "zero" for f, _ in inst.eq_problems):
            bad("requires every f_k to be zero")
        if which == 44 and any(not B.is_zero for _, B in inst.eq_problems):
            bad("requires every B_k to be zero")
    if runner.startswith("baseline"):
        if not inst.space.is_hilbert:
            bad("baselines are Hilbert-space only")
        if inst.m != 1 or inst.d != 1:
            bad("baselines need exactly one T map and one A operator")


def load_experiment(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"{path}:0: cannot read file: {exc.strerror}")
    return parse_experiment(text, str(path))


# ---------------------------------------------------------------------------
# serialization of instances


def instance_to_json(inst: ProblemInstance, runner: str, config: Optional[dict] = None,
                     extra: Optional[dict] = None) -> dict:
    fam = {
        "T": [T.to_json() for T in inst.T_family],
        "A": [{"map": A.map.to_json(), "gamma": A.gamma} for A in inst.A_family],
        "eq": [{"f": f.to_json(), "B": B.to_json()} for f, B in inst.eq_problems],
    }
    sch = {"alpha": inst.alpha.to_json(), "r": inst.r.to_json(),
           "beta": [float(b) for b in inst.beta]}
    if inst.m:
        sch["lambda"] = inst.lam.to_json()
    space = {"kind": inst.space.kind, "dim": inst.space.dim}
    if inst.space.kind == "lp":
        space["p"] = inst.space.p
    doc = {
        "space": space,
        "set": set_to_json(inst.C),
        "families": fam,
        "schedules": sch,
        "runner": runner,
        "config": config or {"tol": 1e-6, "max_iters": 10000, "seed": 0,
                             "invariant_checks": True},
        "x0": inst.x0.tolist(),
    }
    if inst.known_common_solution is not None:
        doc["known_common_solution"] = inst.known_common_solution.tolist()
    if extra:
        doc.update(extra)
    return doc


# ---------------------------------------------------------------------------
# oracle


@dataclass
class OracleReport:
    F_description: str
    oracle_point: Optional[np.ndarray]
    method: Optional[str]
    distance: Optional[float]
    invariant_counts: dict = field(default_factory=dict)

    @property
    def available(self) -> bool:
        return self.oracle_point is not None


def _gep_set(C: ConvexSet, f: Bifunction, B: MonotoneMap, pstar) -> Optional[ConvexSet]:
    """Exact GEP(f, B) over C when it is C cut by an affine set.

    Uses ``{x in C : M x + m = 0}`` with ``M`` the combined affine map; this is
    the full solution set when ``M`` is symmetric, or when a known solution
    with ``M p + m = 0`` lies in the interior of ``C``.
    """
    if f.kind == "zero" and B.is_zero:
        return None
    G = f.representative
    M = G.Q + B.Q
    m = G.q + B.q
    try:
        Z = Affine(M, -m)
    except ValueError:
        return None
    symmetric = np.allclose(M, M.T, atol=1e-12)
    if not symmetric:
        if pstar is None or np.abs(M @ pstar + m).max() > 1e-9:
            return None
        if not isinstance(C, (Box, WholeSpace)):
            return None
        if isinstance(C, Box) and not (np.all(pstar > C.lower + 1e-9)
                                       and np.all(pstar < C.upper - 1e-9)):
            return None
    return Z


def explicit_solution_set(inst: ProblemInstance) -> Optional[List[ConvexSet]]:
    """The common solution set as a list of sets to intersect, or ``None``."""
    parts: List[ConvexSet] = [inst.C]
    for T in inst.T_family:
        if not T.checked:
            return None
        parts.append(T.fixed_set)
    for A in inst.A_family:
        Z = A.zero_set()
        if Z is None:
            return None
        parts.append(Z)
    for f, B in inst.eq_problems:
        if f.kind == "zero" and B.is_zero:
            continue
        S = _gep_set(inst.C, f, B, inst.known_common_solution)
        if S is None:
            return None
        parts.append(S)
    return [p for p in parts if not isinstance(p, WholeSpace)] or [WholeSpace(inst.space.dim)]


def _affine_closed_form(parts, x0) -> Optional[np.ndarray]:
    rows, rhs = [], []
    for p in parts:
        if isinstance(p, Affine):
            rows.append(p.A)
            rhs.append(p.b)
        elif not isinstance(p, (Box, WholeSpace)):
            return None
    if not rows:
        return x0.copy()
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    return x0 - np.linalg.pinv(A) @ (A @ x0 - b)


def compute_oracle(inst: ProblemInstance, x_limit=None) -> OracleReport:
    """``Pi_F(x0)`` for instances whose solution set is explicit."""
    parts = explicit_solution_set(inst)
    if parts is None:
        return OracleReport("not explicit (unchecked map or non-affine solution set)",
                            None, None, None)
    desc = " & ".join(type(p).__name__ for p in parts)
    F = parts[0] if len(parts) == 1 else Intersection(tuple(parts))
    point, method = None, None
    if inst.space.is_hilbert:
        cf = _affine_closed_form(parts, inst.x0)
        if cf is not None and inst.C.contains(cf, 1e-12):
            point, method = cf, "closed-form"
    if point is None:
        try:
            point = gen_project(inst.space, F, inst.x0)
            method = "QP-on-explicit-F"
        except InfeasibleError:
            return OracleReport(desc + " (empty)", None, None, None)
    dist = None
    if x_limit is not None:
        dist = _pnorm(np.asarray(x_limit) - point, inst.space.p)
    return OracleReport(desc, point, method, dist)


# ---------------------------------------------------------------------------
# running


def _fmt(v: float) -> str:
    return repr(float(v))


def _xstr(x) -> str:
    return ";".join(_fmt(v) for v in x)


def _hybrid(spec: ExperimentSpec):
    inst, cfg, runner = spec.instance, spec.config, spec.runner
    if runner == "theorem1":
        return run_theorem1(inst, cfg)
    if runner == "theorem2":
        return run_theorem2(inst, cfg)
    if runner == "theorem4":
        return run_theorem4(inst, cfg)
    return run_hilbert_corollaries(inst, int(runner[-2:]), cfg)


def _trace_rows_hybrid(trace, inst):
    rows = []
    for r in trace.records:
        rows.append([str(r.n), _xstr(r.x_next), _fmt(r.phi_x0), _fmt(r.step_norm),
                     _fmt(r.max_T_residual), _fmt(r.max_A_residual), _fmt(r.max_gep_residual),
                     "1" if r.cut_feasible else "0", "1" if r.invariants_ok else "0"])
    return rows


def _run_baseline(spec: ExperimentSpec):
    inst, cfg = spec.instance, spec.config
    S, A = inst.T_family[0], inst.A_family[0]

    def residuals(prev, x):
        return {"step_norm": float(np.linalg.norm(x - prev)),
                "max_T_residual": float(np.linalg.norm(S(x) - x)),
                "max_A_residual": float(np.linalg.norm(A(x))),
                "max_gep_residual": max((gep_residual(inst.C, f, B, x)
                                         for f, B in inst.eq_problems), default=0.0)}

    def stop(prev, x):
        return all(v <= cfg.tol for v in residuals(prev, x).values())

    if spec.runner == "baseline8":
        bt = run_baseline_takahashi_toyoda(inst.C, S, A, inst.alpha, inst.lam, inst.x0,
                                           max_iters=cfg.max_iters, tol=cfg.tol,
                                           solution=inst.known_common_solution, stop=stop)
    else:
        bt = run_baseline_iiduka_takahashi(inst.C, S, A, spec.baseline_u,
                                           spec.baseline_anchor_weight, spec.baseline_inertia,
                                           inst.lam, inst.x0, max_iters=cfg.max_iters,
                                           tol=cfg.tol, solution=inst.known_common_solution,
                                           stop=stop)
    rows = []
    xs = bt.iterates
    last_res = {}
    for n in range(1, len(xs)):
        x = xs[n]
        last_res = residuals(xs[n - 1], x)
        rows.append([str(n - 1), _xstr(x), _fmt(lyapunov_phi(inst.space, x, inst.x0))]
                    + [_fmt(last_res[k]) for k in ("step_norm", "max_T_residual",
                                                   "max_A_residual", "max_gep_residual")]
                    + ["1", "1"])
    done = bool(last_res) and all(v <= cfg.tol for v in last_res.values())
    res = SolverResult(xs[-1].copy(), len(xs) - 1, "converged" if done else "max_iters",
                       last_res, True)
    return res, rows, bt


def run_experiment(spec: ExperimentSpec, trace_path=None, summary_path=None,
                   write: bool = True):
    """Execute ``spec``; returns ``(SolverResult, OracleReport, exit_code, summary_text)``.

    Exit code 0 iff the run converged and every enabled invariant check
    passed; 3 otherwise.
    """
    trace_path = trace_path or spec.trace_path
    summary_path = summary_path or spec.summary_path
    inst = spec.instance
    extra = {}
    if spec.runner.startswith("baseline"):
        result, rows, bt = _run_baseline(spec)
        if bt.distances is not None:
            d = bt.distances
            extra["distance_monotone"] = str(int(bool(np.all(np.diff(d) <= 1e-12))))
        counts = {}
        unchecked = False
    else:
        result, trace = _hybrid(spec)
        rows = _trace_rows_hybrid(trace, inst)
        counts = trace.invariant_failures()
        unchecked = trace.unchecked_maps
    oracle = compute_oracle(inst, result.x) if result.converged else \
        OracleReport("not computed (run did not converge)", None, None, None)
    oracle.invariant_counts = counts
    ok = result.converged and result.invariants_ok
    exit_code = 0 if ok else 3

    lines = [
        ("runner", spec.runner),
        ("termination", result.termination),
        ("iterations", str(result.iterations)),
        ("x", _xstr(result.x)),
    ]
    for k in ("step_norm", "max_T_residual", "max_A_residual", "max_gep_residual"):
        lines.append((k, _fmt(result.residuals.get(k, float("nan")))))
    lines.append(("invariants_ok", str(int(result.invariants_ok))))
    for k, v in sorted(counts.items()):
        lines.append((f"invariant_failures.{k}", str(v)))
    if unchecked:
        lines.append(("unchecked_maps", "1"))
    for k, v in extra.items():
        lines.append((k, v))
    lines.append(("oracle_F", oracle.F_description))
    if oracle.available:
        lines.append(("oracle_method", oracle.method))
        lines.append(("oracle_point", _xstr(oracle.oracle_point)))
        if oracle.distance is not None:
            lines.append(("oracle_distance", _fmt(oracle.distance)))
    if result.message:
        lines.append(("message", result.message.replace("\n", " ")))
    lines.append(("exit_code", str(exit_code)))
    summary = "".join(f"{k}={v}\n" for k, v in lines)

    if write and trace_path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        w.writerows(rows)
        Path(trace_path).write_text(buf.getvalue())
    if write and summary_path:
        Path(summary_path).write_text(summary)
    return result, oracle, exit_code, summary


# ---------------------------------------------------------------------------
# instance generation


def _psd_low_rank(rng, U, rank, scale=1.0):
    """Symmetric PSD matrix whose range lies in span(U) (columns), lambda_max = scale."""
    k = U.shape[1]
    R = U @ rng.standard_normal((k, rank))
    M = R @ R.T
    lmax = np.linalg.eigvalsh(M)[-1]
    return scale * M / lmax


def _skew_on(rng, U):
    K = rng.standard_normal((U.shape[1], U.shape[1]))
    S = U @ (K - K.T) @ U.T
    return S / max(np.linalg.norm(S, 2), 1e-300)


def generate_instance(seed: int, template: str, dim: int = 5, space: str = "hilbert",
                      p: float = 1.5) -> dict:
    """Random instance with a planted common solution ``p*``, as a JSON document.

    All constraint normals are drawn from one random subspace ``U``, so the
    common solution set contains ``C`` intersected with ``p* + U^perp``.  ``p*`` is
    interior to the box ``C``.  Seeds divisible by 4 put ``x0`` where the
    affine projection of ``x0`` stays inside ``C``, so ``Pi_F(x0)`` has a
    closed form.  Every map ``B`` is symmetric PSD with ``B p* = 0`` and
    ``lambda_max(B) <= 1``; skew parts only enter vi-type bifunctions.
    """
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; choose from {', '.join(TEMPLATES)}")
    if space not in ("hilbert", "lp"):
        raise ValueError("space must be hilbert or lp")
    if space == "lp" and template == "full-theorem1" and p > 2:
        raise ValueError("full-theorem1 needs 2-uniform convexity (p <= 2)")
    rng = np.random.default_rng([seed, TEMPLATES.index(template)])
    n = dim
    lower, upper = -2.0 * np.ones(n), 2.0 * np.ones(n)
    pstar = rng.uniform(-1.0, 1.0, n)
    k = int(rng.integers(max(1, n - 3), n))  # codimension of F
    U = np.linalg.qr(rng.standard_normal((n, n)))[0][:, :k]
    lp_space = space == "lp"
    proj_type = "gen_projection" if lp_space else "projection"

    def normals(count):
        return (U @ rng.standard_normal((k, count))).T

    def hyperplanes(count):
        Nm = normals(count)
        Nm /= np.linalg.norm(Nm, axis=1, keepdims=True)
        return {"type": "affine", "A": Nm.tolist(), "b": (Nm @ pstar).tolist()}

    def proj_map():
        m = {"type": proj_type, "set": hyperplanes(int(rng.integers(1, k + 1)))}
        if rng.random() < 0.4:
            m = {"type": "averaged", "t": float(rng.uniform(0.2, 0.8)), "inner": m}
        return m

    def affine_zero_at_pstar(Q):
        return {"type": "affine", "Q": Q.tolist(), "q": (-Q @ pstar).tolist()}

    def separable():
        H = _psd_low_rank(rng, U, int(rng.integers(1, k + 1)), rng.uniform(0.5, 2.0))
        return {"type": "separable", "H": H.tolist(), "a": pstar.tolist()}

    def vi_type(skew=True):
        M = _psd_low_rank(rng, U, int(rng.integers(1, k + 1)), rng.uniform(0.5, 2.0))
        if skew and not lp_space:
            M = M + rng.uniform(0.2, 1.0) * _skew_on(rng, U)
        return {"type": "vi", "map": affine_zero_at_pstar(M)}

    def b_map():
        Q = _psd_low_rank(rng, U, int(rng.integers(1, k + 1)), rng.uniform(0.3, 1.0))
        return affine_zero_at_pstar(Q)

    zero = {"type": "zero"}
    closed = seed % 4 == 0
    T: list = [{"type": "identity"}]
    A: list = []
    eq: list = []
    runner = "theorem2"
    if template == "fp-only":
        T = [proj_map() for _ in range(int(rng.integers(2, 4)))]
        eq = [{"f": zero, "B": zero}, {"f": zero, "B": zero}]
    elif template == "two-ep":
        T = [proj_map()]
        eq = [{"f": separable(), "B": zero},
              {"f": separable() if lp_space or rng.random() >= 0.5 else vi_type(skew=not closed),
               "B": zero}]
    elif template == "two-vi":
        T = [proj_map()]
        eq = [{"f": zero, "B": b_map()}, {"f": zero, "B": b_map()}]
    elif template == "full-theorem1":
        runner = "theorem1"
        T = [proj_map() for _ in range(int(rng.integers(1, 3)))]
        for _ in range(int(rng.integers(1, 3))):
            Q = _psd_low_rank(rng, U, int(rng.integers(1, k + 1)), rng.uniform(0.5, 2.0))
            A.append({"map": affine_zero_at_pstar(Q)})
        eq = [{"f": separable(), "B": b_map() if not lp_space else zero},
              {"f": vi_type(skew=not closed), "B": b_map() if not lp_space else zero}]
    elif template == "multi-q":
        runner = "theorem4"
        T = [proj_map()]
        q = int(rng.integers(3, 5))
        eq = [{"f": separable(), "B": b_map() if not lp_space else zero} for _ in range(q)]
    # x0: random point of C.  Seeds divisible by 4 start within 0.3 of p* per
    # coordinate, so the affine projection of x0 moves it by at most
    # 0.3 sqrt(n) < 1 and stays inside the box.
    if closed:
        x0 = pstar + rng.uniform(-0.3, 0.3, n)
    else:
        x0 = rng.uniform(lower, upper)
    q_count = len(eq)
    beta = [1.0 / q_count] * q_count
    beta[-1] = 1.0 - sum(beta[:-1])
    sp = {"kind": space, "dim": n}
    if lp_space:
        sp["p"] = float(p)
    doc = {
        "space": sp,
        "set": {"type": "box", "lower": lower.tolist(), "upper": upper.tolist()},
        "families": {"T": T, "A": A, "eq": eq},
        "schedules": {"alpha": {"const": 0.5}, "r": {"const": 1.0}, "beta": beta},
        "runner": runner,
        "config": {"tol": 1e-6, "max_iters": 10000, "seed": int(seed),
                   "invariant_checks": True},
        "x0": x0.tolist(),
        "known_common_solution": pstar.tolist(),
        "generator": {"template": template, "seed": int(seed), "codim_F": k},
    }
    return doc


def dump_instance(doc: dict) -> str:
    return json.dumps(doc, indent=2) + "\n"
