"""Hybrid shrinking-projection iterations.

One outer step, for step index ``n`` (0-based, families visited cyclically):

    z_n     = Pi_C J^{-1}(J x_n - lambda_n A_{n mod m} x_n)       (z_n = x_n if m = 0)
    y_n     = J^{-1}(alpha_n J x_n + (1 - alpha_n) J T_{n mod d} z_n)
    u_{k,n} = T_{k, r_n} y_n                                       k = 1..q
    w_n     = J^{-1}(sum_k beta_k J u_{k,n})
    C_{n+1} = C_n  intersected with  {z : phi(z, w_n) <= phi(z, x_n)}
    x_{n+1} = Pi_{C_{n+1}} x_0

Every ``C_n`` is ``C`` cut by halfspaces, so the last line is a projection
onto a polyhedron whenever ``C`` is one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .geometry import ConfigurationError, SpaceSpec, _duality, _pnorm, lyapunov_phi
from .operators import Bifunction, FixedPointMap, IsmOperator, MonotoneMap
from .resolvent import ResolventError, ResolventProblem, _WarmStart, solve_resolvent
from .sets import (ConvexSet, CutAccumulator, Halfspace, InfeasibleError, ProjectionError,
                   gen_project, halfspace_from_phi_cut, metric_project)

__all__ = [
    "Schedule",
    "ProblemInstance",
    "SolverConfig",
    "StepRecord",
    "IterationTrace",
    "SolverResult",
    "step_theorem1",
    "run_theorem1",
    "run_theorem2",
    "run_theorem4",
    "run_hilbert_corollaries",
    "run_baseline_takahashi_toyoda",
    "run_baseline_iiduka_takahashi",
    "gep_residual",
]

PHI_TOL = 1e-8


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True, eq=False)
class Schedule:
    """A parameter sequence ``n -> value``.

    Either a constant, a finite list extended by its last value, or an
    arbitrary callable (validated on its first ``horizon`` values).
    """

    const: Optional[float] = None
    values: Optional[tuple] = None
    fn: Optional[Callable[[int], float]] = None
    horizon: int = 1000

    def __post_init__(self):
        given = sum(v is not None for v in (self.const, self.values, self.fn))
        if given != 1:
            raise ValueError("a schedule needs exactly one of const, values, fn")
        if self.values is not None:
            if len(self.values) == 0:
                raise ValueError("schedule list is empty")
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @classmethod
    def constant(cls, v: float) -> "Schedule":
        return cls(const=float(v))

    @classmethod
    def from_list(cls, vals: Sequence[float]) -> "Schedule":
        return cls(values=tuple(vals))

    @classmethod
    def coerce(cls, s) -> "Schedule":
        if isinstance(s, Schedule):
            return s
        if callable(s):
            return cls(fn=s)
        if np.ndim(s) == 0:
            return cls.constant(float(s))
        return cls.from_list(list(s))

    def __call__(self, n: int) -> float:
        if self.const is not None:
            return self.const
        if self.values is not None:
            return self.values[min(n, len(self.values) - 1)]
        return float(self.fn(n))

    def checked_values(self) -> np.ndarray:
        """Every value the schedule can take (a prefix for callables)."""
        if self.const is not None:
            return np.array([self.const])
        if self.values is not None:
            return np.array(self.values)
        return np.array([self(n) for n in range(self.horizon)])

    def to_json(self) -> dict:
        if self.const is not None:
            return {"const": self.const}
        if self.values is not None:
            return {"list": list(self.values)}
        raise TypeError("callable schedules cannot be serialized")


# ---------------------------------------------------------------------------
# problem instances


@dataclass(eq=False)
class ProblemInstance:
    """All data of one common-solution problem plus the iteration schedules.

    ``eq_problems`` holds the ``(f_k, B_k)`` pairs; ``beta`` their weights.
    Unset schedules get defaults: ``alpha = 0.5``, ``r = 1`` and
    ``lambda = kappa / 2`` with ``kappa = c^2 gamma / 2``, the midpoint of
    ``[a, b] = [0.1, 0.9] * kappa``.
    """

    space: SpaceSpec
    C: ConvexSet
    T_family: List[FixedPointMap]
    A_family: List[IsmOperator]
    eq_problems: List[tuple]
    x0: np.ndarray
    beta: Optional[Sequence[float]] = None
    alpha: Optional[Schedule] = None
    lam: Optional[Schedule] = None
    r: Optional[Schedule] = None
    known_common_solution: Optional[np.ndarray] = None
    lam_bounds: tuple = field(init=False, default=(None, None))
    r_min: float = field(init=False, default=1.0)

    def __post_init__(self):
        sp = self.space
        n = sp.dim
        self.x0 = np.asarray(self.x0, dtype=float)
        sp.check(self.x0)
        if self.C.dim != n:
            raise ValueError("dimension mismatch between C and the space")
        self.T_family = list(self.T_family)
        self.A_family = list(self.A_family)
        self.eq_problems = [tuple(pair) for pair in self.eq_problems]
        if len(self.T_family) < 1:
            raise ConfigurationError("the T family needs at least one map (use identity)")
        if len(self.eq_problems) < 1:
            raise ConfigurationError("at least one (f, B) pair is required")
        for f, B in self.eq_problems:
            if not isinstance(f, Bifunction) or not isinstance(B, MonotoneMap):
                raise TypeError("eq_problems entries must be (Bifunction, MonotoneMap)")
            if f.dim != n or B.dim != n:
                raise ValueError("dimension mismatch in an (f, B) pair")
        for A in self.A_family:
            if A.dim != n:
                raise ValueError("dimension mismatch in the A family")
        q = len(self.eq_problems)
        beta = np.full(q, 1.0 / q) if self.beta is None else np.asarray(self.beta, dtype=float)
        if beta.shape != (q,):
            raise ConfigurationError(f"beta needs {q} weights, got {beta.size}")
        if np.any(beta <= 0):
            raise ConfigurationError("beta weights must be strictly positive")
        if abs(beta.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"beta must sum to 1 (sum is {beta.sum():.12g})")
        self.beta = beta

        self.alpha = Schedule.coerce(0.5 if self.alpha is None else self.alpha)
        av = self.alpha.checked_values()
        if not np.all((av > 0) & (av < 1)) or np.min(av * (1 - av)) <= 0:
            raise ConfigurationError("alpha schedule must stay in (0, 1) so that "
                                     "alpha_n (1 - alpha_n) is bounded away from 0")

        self.r = Schedule.coerce(1.0 if self.r is None else self.r)
        rv = self.r.checked_values()
        if not np.all(np.isfinite(rv)) or rv.min() <= 0:
            raise ConfigurationError("r schedule must be bounded below by some c1 > 0")
        self.r_min = float(rv.min())

        if self.A_family:
            sp.require_two_uniform_convexity("an inverse-strongly-monotone family")
            gamma = min(A.gamma for A in self.A_family)
            kappa = sp.c ** 2 * gamma / 2.0
            if self.lam is None:
                self.lam = Schedule.constant(0.5 * kappa)
                self.lam_bounds = (0.1 * kappa, 0.9 * kappa)
            else:
                self.lam = Schedule.coerce(self.lam)
                lv = self.lam.checked_values()
                if lv.min() <= 0:
                    raise ConfigurationError("lambda schedule must be positive")
                if lv.max() >= kappa:
                    raise ConfigurationError(
                        f"lambda schedule exceeds c^2*gamma/2 = {kappa:.6g} "
                        f"(max lambda {lv.max():.6g}); need 0 < a <= lambda_n <= b < c^2*gamma/2")
                self.lam_bounds = (float(lv.min()), float(lv.max()))
        else:
            self.lam = Schedule.coerce(0.0 if self.lam is None else self.lam)

        if not self.C.contains(self.x0, 1e-9):
            raise ConfigurationError("x0 must lie in C")
        if self.known_common_solution is not None:
            p = np.asarray(self.known_common_solution, dtype=float)
            sp.check(p)
            if not self.C.contains(p, 1e-9):
                raise ConfigurationError("known_common_solution must lie in C")
            self.known_common_solution = p

    @property
    def d(self) -> int:
        return len(self.T_family)

    @property
    def m(self) -> int:
        return len(self.A_family)

    @property
    def q(self) -> int:
        return len(self.eq_problems)


@dataclass
class SolverConfig:
    tol: float = 1e-6
    max_iters: int = 10000
    invariant_checks: bool = True
    fast_path: bool = True
    inner_tol: float = 1e-11
    certify_resolvent: bool = False
    # test hook: at this step index add two contradictory cuts
    inject_cut: Optional[int] = None


@dataclass
class StepRecord:
    n: int
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    u: List[np.ndarray]
    w: np.ndarray
    cut: Halfspace
    x_next: np.ndarray
    step_norm: float
    phi_x0: float
    T_residuals: List[float]
    A_residuals: List[float]
    gep_residuals: List[float]
    cut_feasible: bool
    flags: dict

    @property
    def invariants_ok(self) -> bool:
        return all(self.flags.values())

    @property
    def max_T_residual(self) -> float:
        return max(self.T_residuals, default=0.0)

    @property
    def max_A_residual(self) -> float:
        return max(self.A_residuals, default=0.0)

    @property
    def max_gep_residual(self) -> float:
        return max(self.gep_residuals, default=0.0)


@dataclass
class IterationTrace:
    records: List[StepRecord] = field(default_factory=list)
    unchecked_maps: bool = False

    def __len__(self):
        return len(self.records)

    def iterates(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, 0))
        return np.array([self.records[0].x] + [r.x_next for r in self.records])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def invariant_failures(self) -> dict:
        out: dict = {}
        for r in self.records:
            for k, v in r.flags.items():
                out.setdefault(k, 0)
                out[k] += not v
        return out


@dataclass
class SolverResult:
    x: np.ndarray
    iterations: int
    termination: str
    residuals: dict
    invariants_ok: bool
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.termination == "converged"


# ---------------------------------------------------------------------------
# residuals


def gep_residual(C: ConvexSet, f: Bifunction, B: MonotoneMap, x) -> float:
    """Natural residual ``||x - P_C(x - (G x + B x))||``; zero exactly on GEP(f, B)."""
    x = np.asarray(x, dtype=float)
    return float(np.linalg.norm(x - metric_project(C, x - f.representative(x) - B(x))))


def _residuals(inst: ProblemInstance, x: np.ndarray):
    sp = inst.space
    t_res = [_pnorm(T(x, sp) - x, sp.p) for T in inst.T_family]
    a_res = [_pnorm(A(x), sp.q) for A in inst.A_family]
    g_res = [gep_residual(inst.C, f, B, x) for f, B in inst.eq_problems]
    return t_res, a_res, g_res


# ---------------------------------------------------------------------------
# one step


@dataclass
class _State:
    n: int
    x: np.ndarray
    cuts: CutAccumulator
    warm: list


def _new_state(inst: ProblemInstance) -> _State:
    return _State(0, inst.x0.copy(), CutAccumulator(inst.space, inst.C),
                  [_WarmStart() for _ in inst.eq_problems])


def _advance(inst: ProblemInstance, st: _State, cfg: SolverConfig) -> StepRecord:
    sp = inst.space
    p, q = sp.p, sp.q
    fast = sp.is_hilbert and cfg.fast_path
    n, x = st.n, st.x
    J = (lambda v: v) if fast else (lambda v: _duality(v, p))
    Jinv = (lambda v: v) if fast else (lambda v: _duality(v, q))
    jx = J(x)

    if inst.m:
        A = inst.A_family[n % inst.m]
        lam = inst.lam(n)
        Ax = A(x)
        target = Jinv(jx - lam * Ax)
        z = metric_project(inst.C, target) if fast else gen_project(sp, inst.C, target,
                                                                     generic=True)
    else:
        z = x.copy()

    tz = inst.T_family[n % inst.d](z, sp)
    a = inst.alpha(n)
    y = Jinv(a * jx + (1.0 - a) * J(tz))

    r = inst.r(n)
    us = []
    for (f, B), warm in zip(inst.eq_problems, st.warm):
        prob = ResolventProblem(sp, inst.C, f, B, r, y, r_min=min(inst.r_min, r))
        us.append(solve_resolvent(prob, tol=cfg.inner_tol, warm=warm,
                                  certify=cfg.certify_resolvent))
    if inst.q == 1:
        w = us[0].copy()
    else:
        w = Jinv(sum(b * J(u) for b, u in zip(inst.beta, us)))

    cut = halfspace_from_phi_cut(sp, w, x, generic=not fast)
    st.cuts.append(cut)
    if cfg.inject_cut is not None and n == cfg.inject_cut:
        e1 = np.zeros(sp.dim)
        e1[0] = 1.0
        st.cuts.append(Halfspace(e1, -1.0))
        st.cuts.append(Halfspace(-e1, -1.0))
    if cut.a @ x <= cut.b and (cfg.inject_cut is None or n != cfg.inject_cut):
        # x_n = Pi_{C_n} x_0 already lies in the smaller set C_{n+1}
        x_next = x.copy()
    else:
        x_next = st.cuts.project(inst.x0, generic=not fast)

    flags = {}
    if cfg.invariant_checks:
        flags = _check_invariants(inst, st, x, z, w, x_next, n, Ax if inst.m else None)
    t_res, a_res, g_res = _residuals(inst, x_next)
    rec = StepRecord(n, x, z, y, us, w, cut, x_next,
                     _pnorm(x_next - x, p), lyapunov_phi(sp, x_next, inst.x0),
                     t_res, a_res, g_res, True, flags)
    st.n += 1
    st.x = x_next
    return rec


def _check_invariants(inst, st, x, z, w, x_next, n, Ax) -> dict:
    sp = inst.space
    x0 = inst.x0
    flags = {}
    phi_prev = lyapunov_phi(sp, x, x0)
    phi_next = lyapunov_phi(sp, x_next, x0)
    flags["phi_monotone"] = phi_next >= phi_prev - PHI_TOL * max(1.0, phi_prev)
    flags["in_shrunk_set"] = st.cuts.contains(x_next, 1e-8)
    if inst.m:
        b = inst.lam_bounds[1]
        bound = 4.0 * b ** 2 / sp.c ** 2 * _pnorm(Ax, sp.q) ** 2
        flags["z_step_bound"] = lyapunov_phi(sp, x, z) <= bound + PHI_TOL
    pstar = inst.known_common_solution
    if pstar is not None:
        ref = lyapunov_phi(sp, pstar, x)
        slack = PHI_TOL * max(1.0, ref)
        if inst.m:
            flags["phi_p_z"] = lyapunov_phi(sp, pstar, z) <= ref + slack
        flags["phi_p_w"] = lyapunov_phi(sp, pstar, w) <= ref + slack
    return flags


def step_theorem1(inst: ProblemInstance, state: Optional[_State] = None,
                  config: Optional[SolverConfig] = None):
    """Advance one step; returns ``(new_state, record)``.  Pass ``state=None``
    to start from ``x0``.  The state object is updated in place."""
    st = _new_state(inst) if state is None else state
    rec = _advance(inst, st, config or SolverConfig())
    return st, rec


# ---------------------------------------------------------------------------
# runners


def _run(inst: ProblemInstance, cfg: SolverConfig):
    trace = IterationTrace(unchecked_maps=any(not T.checked for T in inst.T_family))
    st = _new_state(inst)
    termination = "max_iters"
    message = ""
    for _ in range(cfg.max_iters):
        try:
            rec = _advance(inst, st, cfg)
        except InfeasibleError as exc:
            termination, message = "infeasible_cut", str(exc)
            break
        except (ResolventError, ProjectionError) as exc:
            termination, message = "inner_failure", str(exc)
            break
        trace.records.append(rec)
        if (rec.step_norm <= cfg.tol and rec.max_T_residual <= cfg.tol
                and rec.max_A_residual <= cfg.tol and rec.max_gep_residual <= cfg.tol):
            termination = "converged"
            break
    if trace.records:
        last = trace.records[-1]
        residuals = {"step_norm": last.step_norm, "max_T_residual": last.max_T_residual,
                     "max_A_residual": last.max_A_residual,
                     "max_gep_residual": last.max_gep_residual}
    else:
        t_res, a_res, g_res = _residuals(inst, st.x)
        residuals = {"step_norm": float("nan"), "max_T_residual": max(t_res, default=0.0),
                     "max_A_residual": max(a_res, default=0.0),
                     "max_gep_residual": max(g_res, default=0.0)}
    ok = all(r.invariants_ok for r in trace.records)
    if termination == "infeasible_cut" and trace.records:
        for r in trace.records[-1:]:
            r.cut_feasible = False
    result = SolverResult(st.x.copy(), len(trace.records), termination, residuals, ok, message)
    return result, trace


def _config(config, **kw) -> SolverConfig:
    cfg = SolverConfig() if config is None else config
    for k, v in kw.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg


def run_theorem1(inst: ProblemInstance, config: Optional[SolverConfig] = None, **kw):
    """Two (f, B) pairs with weights ``(beta, 1 - beta)``."""
    if inst.q != 2:
        raise ConfigurationError("the two-problem runner needs exactly two (f, B) pairs")
    return _run(inst, _config(config, **kw))


def run_theorem2(inst: ProblemInstance, config: Optional[SolverConfig] = None, **kw):
    """No inverse-strongly-monotone family, so ``z_n = x_n``.  Valid in l_p for
    every p > 1, including p > 2."""
    if inst.m:
        raise ConfigurationError("this runner requires an empty A family")
    if inst.q != 2:
        raise ConfigurationError("the two-problem runner needs exactly two (f, B) pairs")
    return _run(inst, _config(config, **kw))


def run_theorem4(inst: ProblemInstance, config: Optional[SolverConfig] = None, **kw):
    """Any number ``q >= 1`` of (f, B) pairs, averaged with weights ``beta``."""
    return _run(inst, _config(config, **kw))


_COROLLARY_RULES = {
    41: "general Hilbert instance",
    42: "no inverse-strongly-monotone family",
    43: "no inverse-strongly-monotone family and f_k = 0 (variational inequalities)",
    44: "no inverse-strongly-monotone family and B_k = 0 (equilibrium problems)",
}


def run_hilbert_corollaries(inst: ProblemInstance, which: int,
                            config: Optional[SolverConfig] = None, **kw):
    """Hilbert-space specializations.  ``which`` selects the configuration:

    41  general instance (quasi-nonexpansive maps, metric projections)
    42  no A family
    43  no A family, every f_k zero
    44  no A family, every B_k zero
    """
    if which not in _COROLLARY_RULES:
        raise ValueError(f"unknown corollary configuration {which}")
    if not inst.space.is_hilbert:
        raise ConfigurationError("Hilbert-space runner called on a non-Hilbert space")
    if inst.q != 2:
        raise ConfigurationError("the corollary runners need exactly two (f, B) pairs")
    if which >= 42 and inst.m:
        raise ConfigurationError(f"configuration {which} requires {_COROLLARY_RULES[which]}")
    if which == 43 and any(f.kind != "zero" for f, _ in inst.eq_problems):
        raise ConfigurationError(f"configuration 43 requires {_COROLLARY_RULES[43]}")
    if which == 44 and any(not B.is_zero for _, B in inst.eq_problems):
        raise ConfigurationError(f"configuration 44 requires {_COROLLARY_RULES[44]}")
    return _run(inst, _config(config, **kw))


# ---------------------------------------------------------------------------
# baselines


@dataclass
class BaselineTrace:
    iterates: np.ndarray
    distances: Optional[np.ndarray]

    def __len__(self):
        return len(self.iterates) - 1


def _baseline(update, x0, max_iters, tol, solution, stop=None):
    xs = [np.asarray(x0, dtype=float).copy()]
    for n in range(max_iters):
        xn = update(n, xs[-1])
        xs.append(xn)
        if stop(xs[-2], xn) if stop is not None else np.linalg.norm(xn - xs[-2]) <= tol:
            break
    xs = np.array(xs)
    dist = None if solution is None else np.linalg.norm(xs - np.asarray(solution), axis=1)
    return BaselineTrace(xs, dist)


def run_baseline_takahashi_toyoda(C: ConvexSet, S: FixedPointMap, A: IsmOperator,
                                  alpha, lam, x0, max_iters: int = 10000,
                                  tol: float = 1e-10, solution=None,
                                  stop=None) -> BaselineTrace:
    """Mann-type scheme ``x+ = a x + (1 - a) S P_C(x - lam A x)`` (Hilbert only).

    Stops once ``||x+ - x|| <= tol``, or when ``stop(x, x+)`` is true if given.
    """
    alpha, lam = Schedule.coerce(alpha), Schedule.coerce(lam)

    def update(n, x):
        a = alpha(n)
        return a * x + (1 - a) * S(metric_project(C, x - lam(n) * A(x)))

    return _baseline(update, x0, max_iters, tol, solution, stop)


def run_baseline_iiduka_takahashi(C: ConvexSet, S: FixedPointMap, A: IsmOperator, u,
                                  alpha, beta, lam, x0, max_iters: int = 10000,
                                  tol: float = 1e-10, solution=None,
                                  stop=None) -> BaselineTrace:
    """Halpern-type scheme ``x+ = a u + b x + (1 - a - b) S P_C(x - lam A x)``."""
    alpha, beta, lam = Schedule.coerce(alpha), Schedule.coerce(beta), Schedule.coerce(lam)
    u = np.asarray(u, dtype=float)

    def update(n, x):
        a, b = alpha(n), beta(n)
        if a < 0 or b < 0 or a + b > 1:
            raise ConfigurationError("baseline weights must be a convex combination")
        return a * u + b * x + (1 - a - b) * S(metric_project(C, x - lam(n) * A(x)))

    return _baseline(update, x0, max_iters, tol, solution, stop)
