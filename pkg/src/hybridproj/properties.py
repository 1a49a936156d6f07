"""Sampled property suites, one per module.

Each check evaluates a quantity that should be ``<= 0`` (inequalities, written
as ``lhs - rhs``) or ``0`` (identities, as a scaled absolute error) on random
inputs and records the largest value seen.  A check passes when that value
is within its tolerance.  Universal quantifiers over sets are replaced by
extreme points plus random samples.

The suites are used by the ``props`` command and by the acceptance tests.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .geometry import (SpaceSpec, _duality, _pnorm, check_uniform_convexity_constant,
                       dual_norm, duality_map, duality_map_inverse, hilbert, lp,
                       lyapunov_phi, norm, v_functional)
from .operators import (Averaged, Bifunction, EuclideanProjection, GeneralizedProjection,
                        Identity, IsmOperator, MonotoneMap, check_bifunction, check_ism,
                        check_relatively_nonexpansive)
from .resolvent import (ResolventProblem, check_firm_nonexpansiveness,
                        check_resolvent_phi_inequality, resolvent_margin, solve_resolvent)
from .sets import (Affine, Ball, Box, Halfspace, WholeSpace, gen_project,
                   halfspace_from_phi_cut, metric_project, sample_points)

__all__ = ["PropertyResult", "SUITES", "run_suite", "resolve_module"]


@dataclass
class PropertyResult:
    module: str
    name: str
    samples: int
    worst: float
    tolerance: float
    seconds: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.worst)) and self.worst <= self.tolerance

    def line(self) -> str:
        verdict = "PASS" if self.ok else "FAIL"
        return (f"{verdict} {self.module}/{self.name} samples={self.samples} "
                f"worst={self.worst:.3e} tol={self.tolerance:.1e} time={self.seconds:.2f}s")


class _Recorder:
    def __init__(self, module: str):
        self.module = module
        self.results: List[PropertyResult] = []

    def check(self, name: str, tol: float, fn: Callable[[], tuple]):
        t = time.perf_counter()
        worst, samples = fn()
        self.results.append(PropertyResult(self.module, name, int(samples), float(worst), tol,
                                           time.perf_counter() - t))


def _vectors(rng, dim, count, sparse=0.2):
    """Random vectors spanning several orders of magnitude, some sparse."""
    X = rng.standard_normal((count, dim)) * 10.0 ** rng.uniform(-2, 2, size=(count, 1))
    mask = (rng.random((count, 1)) < sparse) & (rng.random((count, dim)) < 0.5)
    X[mask] = 0.0
    return X


# ---------------------------------------------------------------------------
# space geometry


def geometry_suite(samples: int = 1000, seed: int = 0, dim: int = 5,
                   exponents=(None, 1.5, 2.0, 3.0)) -> List[PropertyResult]:
    """``None`` in ``exponents`` stands for the Hilbert space."""
    rec = _Recorder("space-geometry")
    for e in exponents:
        sp = hilbert(dim) if e is None else lp(e, dim)
        tag = "hilbert" if e is None else f"lp{e:g}"
        rng = np.random.default_rng([seed, int(sp.p * 100)])
        X = _vectors(rng, dim, samples)
        Y = _vectors(rng, dim, samples)

        def identity():
            worst = 0.0
            for x in X:
                jx = duality_map(sp, x)
                nx = norm(sp, x)
                worst = max(worst, abs(x @ jx - nx ** 2) / (1 + nx ** 2),
                            abs(dual_norm(sp, jx) - nx) / (1 + nx))
            return worst, len(X)

        def round_trip():
            worst = 0.0
            for x in X:
                back = duality_map_inverse(sp, duality_map(sp, x))
                fwd = duality_map(sp, duality_map_inverse(sp, x))
                worst = max(worst, np.abs(back - x).max() / (1 + np.abs(x).max()),
                            np.abs(fwd - x).max() / (1 + np.abs(x).max()))
            return worst, len(X)

        def sandwich():
            worst = -np.inf
            for x, y in zip(X, Y):
                nx, ny = norm(sp, x), norm(sp, y)
                ph = lyapunov_phi(sp, x, y)
                scale = 1 + (nx + ny) ** 2
                worst = max(worst, ((nx - ny) ** 2 - ph) / scale, (ph - (nx + ny) ** 2) / scale)
            return worst, len(X)

        def three_point():
            # V(x, x*) + 2<J^{-1} x* - x, y*> <= V(x, x* + y*)
            worst = -np.inf
            U = _vectors(rng, dim, samples)
            for x, u, v in zip(X, Y, U):
                lhs = v_functional(sp, x, u) + 2 * (duality_map_inverse(sp, u) - x) @ v
                rhs = v_functional(sp, x, u + v)
                worst = max(worst, (lhs - rhs) / (1 + abs(rhs) + abs(lhs)))
            return worst, len(X)

        rec.check(f"duality_identity[{tag}]", 1e-10, identity)
        rec.check(f"round_trip[{tag}]", 1e-10, round_trip)
        rec.check(f"phi_sandwich[{tag}]", 1e-12, sandwich)
        rec.check(f"three_point_V[{tag}]", 1e-10, three_point)
        if sp.two_uniformly_convex:
            rec.check(f"uniform_convexity_c[{tag}]", 0.0,
                      lambda: (-check_uniform_convexity_constant(sp, samples, seed), samples))
        if e is None:
            def reduction():
                worst = 0.0
                for x, y in zip(X, Y):
                    d = x - y
                    worst = max(worst, abs(lyapunov_phi(sp, x, y) - d @ d) / (1 + d @ d))
                return worst, len(X)
            rec.check("hilbert_phi_is_squared_distance", 1e-12, reduction)
    return rec.results


# ---------------------------------------------------------------------------
# convex sets


def _catalog_sets(dim: int):
    a = np.zeros(dim)
    a[0], a[-1] = 1.0, -0.5
    return {
        "box": Box(-np.ones(dim), np.linspace(0.5, 2.0, dim)),
        "ball": Ball(np.full(dim, 0.5), 1.5),
        "halfspace": Halfspace(a, 0.3),
    }


def sets_suite(samples: int = 200, seed: int = 0, dim: int = 3) -> List[PropertyResult]:
    rec = _Recorder("convex-sets")
    for sp in (hilbert(dim), lp(1.5, dim)):
        tag = "hilbert" if sp.is_hilbert else f"lp{sp.p:g}"
        for sname, S in _catalog_sets(dim).items():
            rng = np.random.default_rng([seed, len(sname), int(sp.p * 10)])
            ys = [S.anchor() + 3.0 * rng.standard_normal(dim) for _ in range(samples)]
            proj = [gen_project(sp, S, y) for y in ys]
            members = sample_points(S, rng, samples)

            def three_point():
                worst = -np.inf
                for y, py, z in zip(ys, proj, members):
                    m = (lyapunov_phi(sp, z, py) + lyapunov_phi(sp, py, y)
                         - lyapunov_phi(sp, z, y))
                    worst = max(worst, m)
                return worst, samples

            def variational():
                # <z - Pi y, J Pi y - J y> >= 0 for z in S
                worst = -np.inf
                Z = np.array(members)
                for y, py in zip(ys, proj):
                    g = _duality(py, sp.p) - _duality(y, sp.p)
                    worst = max(worst, float(np.max(-(Z - py) @ g)))
                return worst, samples

            def idempotent():
                worst = max(np.abs(gen_project(sp, S, py) - py).max() for py in proj)
                return worst, samples

            rec.check(f"three_point_projection[{tag},{sname}]", 1e-8, three_point)
            rec.check(f"variational_characterization[{tag},{sname}]", 1e-8, variational)
            rec.check(f"idempotence[{tag},{sname}]", 1e-8, idempotent)
            if sp.is_hilbert:
                def agree():
                    worst = max(np.abs(gen_project(sp, S, y, generic=True)
                                       - metric_project(S, y)).max() for y in ys)
                    return worst, samples

                def firm():
                    worst = -np.inf
                    for k in range(samples - 1):
                        d = proj[k] - proj[k + 1]
                        worst = max(worst, d @ d - d @ (ys[k] - ys[k + 1]))
                    return worst, samples - 1

                rec.check(f"generic_matches_metric[{sname}]", 1e-8, agree)
                rec.check(f"projection_firmness[{sname}]", 1e-8, firm)

        rng = np.random.default_rng([seed, 99, int(sp.p * 10)])

        def cut_sign():
            worst = 0.0
            count = 0
            for _ in range(max(1, samples // 20)):
                w, x = rng.standard_normal((2, dim)) * 2
                H = halfspace_from_phi_cut(sp, w, x)
                for z in rng.standard_normal((50, dim)) * 3:
                    gap = lyapunov_phi(sp, z, x) - lyapunov_phi(sp, z, w)
                    if abs(gap) > 1e-9:
                        count += 1
                        worst += float(H.contains(z) != (gap >= 0))
            return worst, count

        rec.check(f"cut_membership_sign[{tag}]", 0.0, cut_sign)
    return rec.results


# ---------------------------------------------------------------------------
# operator catalog


def operators_suite(samples: int = 500, seed: int = 0, dim: int = 4) -> List[PropertyResult]:
    rec = _Recorder("operator-catalog")
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((dim, dim))
    psd = M @ M.T / dim
    skew = rng.standard_normal((dim, dim))
    skew = skew - skew.T
    hs = hilbert(dim)
    ops = {
        "identity": IsmOperator(MonotoneMap.affine(np.eye(dim)), 1.0),
        "diag12": IsmOperator(MonotoneMap.affine(np.diag(np.linspace(1, 2, dim))), 0.5),
        "psd_affine": IsmOperator(MonotoneMap.affine(psd, rng.standard_normal(dim))),
        "zero": IsmOperator(MonotoneMap.zero(dim), 0.5),
    }
    for name, op in ops.items():
        rep = check_ism(op, hs, samples, seed)
        rec.check(f"inverse_strong_monotonicity[{name}]", 0.0,
                  lambda rep=rep: (rep.violations, rep.samples))

        def lipschitz(op=op):
            worst = -np.inf
            for _ in range(samples):
                x, y = rng.standard_normal((2, dim)) * 3
                worst = max(worst, np.linalg.norm(op(x) - op(y))
                            - np.linalg.norm(x - y) / op.gamma)
            return worst, samples

        rec.check(f"lipschitz_from_ism[{name}]", 1e-8, lipschitz)

    def monotone():
        G = MonotoneMap.affine(psd + skew, rng.standard_normal(dim))
        worst = -np.inf
        for _ in range(samples):
            x, y = rng.standard_normal((2, dim)) * 3
            worst = max(worst, -(x - y) @ (G(x) - G(y)))
        return worst, samples

    rec.check("monotone_affine_with_skew", 1e-10, monotone)

    line = Affine(np.eye(dim)[:1], np.array([0.0]))
    maps = {
        "identity": (hs, Identity(dim)),
        "ball_projection": (hs, EuclideanProjection(Ball(np.zeros(dim), 1.0))),
        "averaged_line": (hs, Averaged(0.5, EuclideanProjection(line))),
        "gen_projection_box_lp1.5": (lp(1.5, dim),
                                     GeneralizedProjection(Box(-np.ones(dim), np.ones(dim)))),
        "averaged_gen_projection_lp1.5": (lp(1.5, dim),
                                          Averaged(0.5, GeneralizedProjection(line))),
    }
    for name, (sp, T) in maps.items():
        rep = check_relatively_nonexpansive(T, sp, min(samples, 200), seed)
        rec.check(f"relative_nonexpansiveness[{name}]", 1e-8,
                  lambda rep=rep: (rep.worst_margin, rep.samples))

    bifs = {
        "zero": Bifunction.zero(dim),
        "vi_skew": Bifunction.vi(MonotoneMap.affine(psd + skew)),
        "separable": Bifunction.separable(psd, rng.standard_normal(dim)),
    }
    for name, f in bifs.items():
        rep = check_bifunction(f, samples, seed)
        rec.check(f"bifunction_A1[{name}]", 0.0, lambda rep=rep: (rep.extra["a1_worst"],
                                                                   rep.samples))
        rec.check(f"bifunction_A2[{name}]", 1e-12, lambda rep=rep: (rep.worst_margin,
                                                                     rep.samples))

    def vi_solution_exact():
        # a symmetric vi map with an affine zero set: every zero solves EP over C
        C = Box(-2 * np.ones(dim), 2 * np.ones(dim))
        Q = psd.copy()
        Q[:, -1] = Q[-1, :] = 0.0
        pstar = rng.uniform(-1, 1, dim)
        f = Bifunction.vi(MonotoneMap.affine(Q, -Q @ pstar))
        S = f.solution_set(C)
        Y = np.array(sample_points(C, rng, 200))
        worst = -np.inf
        for z in sample_points(S, rng, 50):
            worst = max(worst, -float(np.min(f(z, Y))))
        return worst, 50

    rec.check("vi_solution_set_exact", 1e-8, vi_solution_exact)
    return rec.results


# ---------------------------------------------------------------------------
# resolvent


def resolvent_suite(samples: int = 50, pairs: int = 100, seed: int = 0,
                    dim: int = 3) -> List[PropertyResult]:
    rec = _Recorder("resolvent")
    rng = np.random.default_rng(seed)
    zero_f, zero_B = Bifunction.zero(dim), MonotoneMap.zero(dim)
    for sp in (hilbert(dim), lp(1.5, dim)):
        tag = "hilbert" if sp.is_hilbert else f"lp{sp.p:g}"
        for sname, S in _catalog_sets(dim).items():
            def matches_projection(S=S, sp=sp):
                worst = 0.0
                for _ in range(samples):
                    x = S.anchor() + 3 * rng.standard_normal(dim)
                    r = 10.0 ** rng.uniform(-1, 1)
                    z = solve_resolvent(ResolventProblem(sp, S, zero_f, zero_B, r, x))
                    worst = max(worst, np.abs(z - gen_project(sp, S, x)).max())
                return worst, samples

            rec.check(f"zero_problem_is_projection[{tag},{sname}]", 1e-8, matches_projection)

    def prox_closed_form():
        H = np.diag(np.linspace(0.5, 2.0, dim))
        a = rng.standard_normal(dim)
        f = Bifunction.separable(H, a)
        worst = 0.0
        for _ in range(samples):
            x = 3 * rng.standard_normal(dim)
            r = 10.0 ** rng.uniform(-1, 1)
            z = solve_resolvent(ResolventProblem(hilbert(dim), WholeSpace(dim), f, zero_B, r, x))
            exact = np.linalg.solve(np.eye(dim) + r * H, x + r * H @ a)
            worst = max(worst, np.abs(z - exact).max())
        return worst, samples

    rec.check("prox_closed_form[hilbert]", 1e-8, prox_closed_form)

    H = np.diag(np.linspace(0.5, 1.5, dim))
    centre = np.full(dim, 0.25)
    box = Box(-np.ones(dim), np.ones(dim))
    templates = {
        "hilbert,ball,zero": (ResolventProblem(hilbert(dim), Ball(np.zeros(dim), 1.0), zero_f,
                                               zero_B, 1.0, np.zeros(dim)), None),
        "hilbert,whole,separable": (ResolventProblem(hilbert(dim), WholeSpace(dim),
                                                     Bifunction.separable(H, centre), zero_B,
                                                     1.0, np.zeros(dim)), centre),
        "lp1.5,box,separable": (ResolventProblem(lp(1.5, dim), box,
                                                 Bifunction.separable(H, centre), zero_B,
                                                 0.7, np.zeros(dim)), centre),
    }
    for name, (tmpl, sol) in templates.items():
        rep = check_firm_nonexpansiveness(tmpl, pairs, seed)
        rec.check(f"firm_nonexpansiveness[{name}]", 1e-6,
                  lambda rep=rep: (rep.worst_margin, rep.samples))
        q = sol if sol is not None else np.full(dim, 0.1)
        rep = check_resolvent_phi_inequality(tmpl, q, pairs, seed)
        rec.check(f"phi_inequality[{name}]", 1e-6,
                  lambda rep=rep: (rep.worst_margin, rep.samples))

        def fixed_point(tmpl=tmpl, q=q):
            z = solve_resolvent(tmpl.with_anchor(q))
            return np.abs(z - q).max(), 1

        rec.check(f"solution_is_fixed[{name}]", 1e-8, fixed_point)

        def single_valued(tmpl=tmpl):
            worst = 0.0
            for _ in range(10):
                prob = tmpl.with_anchor(3 * rng.standard_normal(dim))
                z1 = solve_resolvent(prob)
                z2 = solve_resolvent(prob, z0=tmpl.C.anchor() + rng.standard_normal(dim))
                worst = max(worst, np.abs(z1 - z2).max())
            return worst, 10

        rec.check(f"single_valued[{name}]", 1e-6, single_valued)

        def certificate(tmpl=tmpl):
            worst = -np.inf
            for _ in range(20):
                prob = tmpl.with_anchor(3 * rng.standard_normal(dim))
                worst = max(worst, -resolvent_margin(prob, solve_resolvent(prob)))
            return worst, 20

        rec.check(f"defining_inequality[{name}]", 1e-7, certificate)
    return rec.results


# ---------------------------------------------------------------------------
# hybrid solver and harness


def solver_suite(seed: int = 0) -> List[PropertyResult]:
    from .harness import dump_instance, generate_instance, parse_experiment
    from .solver import run_theorem1

    rec = _Recorder("hybrid-solver")
    for tmpl in ("full-theorem1", "two-ep"):
        doc = generate_instance(seed, tmpl)
        spec = parse_experiment(dump_instance(doc))
        res, trace = run_theorem1(spec.instance, spec.config)
        phis = trace.column("phi_x0")

        rec.check(f"converged[{tmpl}]", 0.0, lambda res=res: (float(not res.converged), 1))
        rec.check(f"phi_x0_nondecreasing[{tmpl}]", 1e-9,
                  lambda phis=phis: (float(np.max(-np.diff(phis), initial=0.0)
                                           / max(1.0, phis.max())), len(phis)))
        rec.check(f"per_iteration_invariants[{tmpl}]", 0.0,
                  lambda trace=trace: (float(sum(trace.invariant_failures().values())),
                                       len(trace)))
        pstar = spec.instance.known_common_solution
        rec.check(f"limit_residual_at_tol[{tmpl}]", 1e-6,
                  lambda res=res: (max(res.residuals.values()), 1))

        def fast_vs_generic(doc=doc):
            other = parse_experiment(dump_instance(doc))
            other.config.fast_path = False
            _, t2 = run_theorem1(other.instance, other.config)
            a, b = trace.iterates(), t2.iterates()
            if a.shape != b.shape:
                return np.inf, len(a)
            return float(np.abs(a - b).max()), len(a)

        rec.check(f"fast_path_matches_generic[{tmpl}]", 1e-9, fast_vs_generic)
        del pstar
    return rec.results


def harness_suite(seed: int = 0) -> List[PropertyResult]:
    from .harness import TEMPLATES, dump_instance, generate_instance, parse_experiment
    from .solver import gep_residual

    rec = _Recorder("harness-cli")
    for tmpl in TEMPLATES:
        def planted(tmpl=tmpl):
            doc = generate_instance(seed, tmpl)
            inst = parse_experiment(dump_instance(doc)).instance
            p = inst.known_common_solution
            vals = [np.abs(T(p, inst.space) - p).max() for T in inst.T_family]
            vals += [np.abs(A(p)).max() for A in inst.A_family]
            vals += [gep_residual(inst.C, f, B, p) for f, B in inst.eq_problems]
            return max(vals), len(vals)

        def deterministic(tmpl=tmpl):
            a = dump_instance(generate_instance(seed, tmpl))
            b = dump_instance(generate_instance(seed, tmpl))
            return float(a != b), 2

        rec.check(f"planted_solution_residuals[{tmpl}]", 1e-12, planted)
        rec.check(f"generation_deterministic[{tmpl}]", 0.0, deterministic)
    return rec.results


SUITES: Dict[str, Callable[..., List[PropertyResult]]] = {
    "space-geometry": geometry_suite,
    "convex-sets": sets_suite,
    "operator-catalog": operators_suite,
    "resolvent": resolvent_suite,
    "hybrid-solver": solver_suite,
    "harness-cli": harness_suite,
}

_ALIASES = {"geometry": "space-geometry", "sets": "convex-sets", "operators": "operator-catalog",
            "solver": "hybrid-solver", "harness": "harness-cli", "cli": "harness-cli"}


def resolve_module(name: str) -> str:
    key = _ALIASES.get(name, name)
    if key not in SUITES:
        raise KeyError(f"unknown module {name!r}; choose from {', '.join(SUITES)}")
    return key


def run_suite(name: str, **kw) -> List[PropertyResult]:
    return SUITES[resolve_module(name)](**kw)
