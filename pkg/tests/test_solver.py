import numpy as np
import pytest

from hybridproj.geometry import ConfigurationError, hilbert, lp, lyapunov_phi
from hybridproj.harness import compute_oracle, dump_instance, generate_instance, parse_experiment
from hybridproj.operators import (Bifunction, EuclideanProjection, GeneralizedProjection,
                                  Identity, IsmOperator, MonotoneMap)
from hybridproj.sets import Affine, Ball, Box, Halfspace, WholeSpace
from hybridproj.solver import (ProblemInstance, Schedule, SolverConfig, gep_residual,
                               run_baseline_iiduka_takahashi, run_baseline_takahashi_toyoda,
                               run_hilbert_corollaries, run_theorem1, run_theorem2,
                               run_theorem4, step_theorem1)


def _zero_pairs(n, q=2):
    return [(Bifunction.zero(n), MonotoneMap.zero(n)) for _ in range(q)]


def trivial(space=None):
    sp = space or hilbert(2)
    n = sp.dim
    A = [IsmOperator(MonotoneMap.zero(n), gamma=0.5)] if sp.two_uniformly_convex else []
    return ProblemInstance(sp, Box(-np.ones(n), np.ones(n)), [Identity(n)], A, _zero_pairs(n),
                           x0=np.full(n, 0.25))


def box_line():
    return ProblemInstance(hilbert(2), Box([-2, -2], [2, 2]),
                           [EuclideanProjection(Affine([[1.0, 0.0]], [0.0]))],
                           [IsmOperator(MonotoneMap.zero(2), gamma=0.5)], _zero_pairs(2),
                           x0=[1.0, 1.0], known_common_solution=[0.0, 1.0])


def affine_zero():
    A = IsmOperator(MonotoneMap.affine(np.eye(2), [-1.0, -1.0]), gamma=1.0)
    return ProblemInstance(hilbert(2), WholeSpace(2), [Identity(2)], [A], _zero_pairs(2),
                           x0=[3.0, -1.0], known_common_solution=[1.0, 1.0])


def separable_common_minimizer(space, q, a, T_set):
    n = space.dim
    rng = np.random.default_rng(7)
    pairs = []
    for _ in range(q):
        M = rng.standard_normal((n, n))
        pairs.append((Bifunction.separable(M @ M.T + 0.1 * np.eye(n), a), MonotoneMap.zero(n)))
    T = GeneralizedProjection(T_set)
    return ProblemInstance(space, Box(-2 * np.ones(n), 2 * np.ones(n)), [T], [], pairs,
                           x0=np.full(n, 1.5), known_common_solution=a)


def _from_template(seed, template, **kw):
    return parse_experiment(dump_instance(generate_instance(seed, template, **kw)))


# --- worked examples ---------------------------------------------------------

def test_trivial_instance_stays_at_x0():
    inst = trivial()
    st, rec = step_theorem1(inst)
    assert rec.cut.is_whole_space
    np.testing.assert_array_equal(rec.x_next, inst.x0)
    for _ in range(3):
        st, rec = step_theorem1(inst, st)
        np.testing.assert_array_equal(rec.x_next, inst.x0)
    res, trace = run_theorem1(trivial())
    assert res.converged and res.iterations == 1
    np.testing.assert_array_equal(res.x, inst.x0)


def test_trivial_instance_in_lp_without_A_family():
    res, _ = run_theorem2(trivial(lp(3.0, 3)))
    assert res.converged and res.iterations == 1


def test_box_line_limit():
    inst = box_line()
    res, trace = run_theorem1(inst)
    assert res.converged and res.invariants_ok
    assert np.linalg.norm(res.x - [0.0, 1.0]) <= 1e-5
    oracle = compute_oracle(inst, res.x)
    assert oracle.method == "closed-form"
    np.testing.assert_allclose(oracle.oracle_point, [0.0, 1.0], atol=1e-14)
    assert oracle.distance <= 10 * 1e-6


def test_affine_zero_limit():
    res, trace = run_theorem1(affine_zero())
    assert res.converged and res.invariants_ok
    assert np.linalg.norm(res.x - [1.0, 1.0]) <= 1e-5
    assert res.residuals["max_A_residual"] <= 1e-6


def test_trace_invariants_and_vanishing_residuals():
    res, trace = run_theorem1(box_line())
    phi = trace.column("phi_x0")
    assert np.all(np.diff(phi) >= -1e-8 * np.maximum(1.0, phi[:-1]))
    steps = trace.column("step_norm")
    k = len(steps) // 4
    assert np.median(steps[-k:]) <= np.median(steps[:k])
    xs = trace.iterates()
    assert xs.shape == (len(trace) + 1, 2)
    assert all(v == 0 for v in trace.invariant_failures().values())
    for r in trace.records:
        assert r.invariants_ok
        # the per-step bound on phi(x_n, z_n)
        assert "z_step_bound" in r.flags and "phi_p_w" in r.flags


def test_cyclic_families_visit_every_member():
    calls = []

    class Spy(Identity):
        def __call__(self, x, space=None):
            calls.append(self.tag)
            return super().__call__(x, space)

    Ts = []
    for tag in range(3):
        t = Spy(2)
        object.__setattr__(t, "tag", tag)
        Ts.append(t)
    inst = ProblemInstance(hilbert(2), WholeSpace(2), Ts, [], _zero_pairs(2), x0=[0.0, 0.0])
    st = None
    for _ in range(6):
        st, _ = step_theorem1(inst, st, SolverConfig(invariant_checks=False))
    # the step applies T_(n mod d) once; residual evaluation calls every member
    stepping = calls[::4]
    assert stepping == [0, 1, 2, 0, 1, 2]


# --- validation -------------------------------------------------------------

@pytest.mark.parametrize("kw,msg", [
    (dict(beta=[0.3, 0.3]), "beta must sum to 1"),
    (dict(beta=[1.2, -0.2]), "strictly positive"),
    (dict(beta=[1.0]), "beta needs 2 weights"),
    (dict(alpha=1.0), "alpha schedule"),
    (dict(alpha=[0.5, 0.0]), "alpha schedule"),
    (dict(r=[1.0, 0.0]), "r schedule"),
    (dict(lam=0.3), "lambda schedule exceeds"),
    (dict(lam=0.0), "lambda schedule must be positive"),
    (dict(x0=[5.0, 0.0]), "x0 must lie in C"),
    (dict(known_common_solution=[5.0, 0.0]), "known_common_solution must lie in C"),
])
def test_instance_validation(kw, msg):
    base = dict(space=hilbert(2), C=Box([-2, -2], [2, 2]), T_family=[Identity(2)],
                A_family=[IsmOperator(MonotoneMap.affine(np.eye(2)), gamma=0.5)],
                eq_problems=_zero_pairs(2), x0=[0.0, 0.0])
    base.update(kw)
    with pytest.raises(ConfigurationError, match=msg):
        ProblemInstance(**base)


def test_lambda_bound_uses_uniform_convexity_constant():
    A = [IsmOperator(MonotoneMap.zero(2), gamma=0.5)]
    # c^2 gamma / 2 = 0.5 * 0.5 / 2 = 0.125 in l_1.5
    ProblemInstance(lp(1.5, 2), WholeSpace(2), [Identity(2)], A, _zero_pairs(2), [0.0, 0.0],
                    lam=0.12)
    with pytest.raises(ConfigurationError):
        ProblemInstance(lp(1.5, 2), WholeSpace(2), [Identity(2)], A, _zero_pairs(2), [0.0, 0.0],
                        lam=0.13)
    inst = ProblemInstance(lp(1.5, 2), WholeSpace(2), [Identity(2)], A, _zero_pairs(2),
                           [0.0, 0.0])
    assert inst.lam(0) == pytest.approx(0.0625)
    assert inst.lam_bounds == pytest.approx((0.0125, 0.1125))


def test_ism_family_rejected_without_uniform_convexity():
    with pytest.raises(ConfigurationError, match="2-uniformly convex"):
        ProblemInstance(lp(3.0, 2), WholeSpace(2), [Identity(2)],
                        [IsmOperator(MonotoneMap.zero(2), gamma=0.5)], _zero_pairs(2), [0.0, 0.0])


def test_empty_families_rejected():
    with pytest.raises(ConfigurationError):
        ProblemInstance(hilbert(2), WholeSpace(2), [], [], _zero_pairs(2), [0.0, 0.0])
    with pytest.raises(ConfigurationError):
        ProblemInstance(hilbert(2), WholeSpace(2), [Identity(2)], [], [], [0.0, 0.0])


def test_schedules():
    s = Schedule.from_list([0.1, 0.2])
    assert s(0) == 0.1 and s(1) == 0.2 and s(50) == 0.2
    assert Schedule.coerce(lambda n: 1.0 / (n + 2))(2) == 0.25
    assert Schedule.coerce(0.3).to_json() == {"const": 0.3}
    with pytest.raises(ValueError):
        Schedule.from_list([])
    with pytest.raises(TypeError):
        Schedule.coerce(lambda n: 0.5).to_json()


def test_runner_preconditions():
    inst = box_line()
    with pytest.raises(ConfigurationError):
        run_theorem2(inst)
    one = ProblemInstance(hilbert(2), WholeSpace(2), [Identity(2)], [], _zero_pairs(2, 1),
                          [0.0, 0.0])
    with pytest.raises(ConfigurationError):
        run_theorem1(one)
    with pytest.raises(ConfigurationError):
        run_hilbert_corollaries(inst, 42)
    with pytest.raises(ValueError):
        run_hilbert_corollaries(inst, 40)
    with pytest.raises(ConfigurationError):
        run_hilbert_corollaries(trivial(lp(1.5, 2)), 41)
    f = Bifunction.separable(np.eye(2), np.zeros(2))
    vi = ProblemInstance(hilbert(2), WholeSpace(2), [Identity(2)], [],
                         [(f, MonotoneMap.zero(2))] * 2, [0.0, 0.0])
    with pytest.raises(ConfigurationError, match="43"):
        run_hilbert_corollaries(vi, 43)
    run_hilbert_corollaries(vi, 44)
    ep = ProblemInstance(hilbert(2), WholeSpace(2), [Identity(2)], [],
                         [(Bifunction.zero(2), MonotoneMap.affine(np.eye(2)))] * 2, [0.0, 0.0])
    with pytest.raises(ConfigurationError, match="44"):
        run_hilbert_corollaries(ep, 44)
    run_hilbert_corollaries(ep, 43)


# --- two-problem and q-problem runners ---------------------------------------------

def test_two_equilibrium_problems_with_shared_minimizer_hilbert():
    a = np.array([0.5, -0.3, 0.2])
    inst = separable_common_minimizer(hilbert(3), 2, a, Ball(a + [0.5, 0, 0], 1.0))
    res, trace = run_theorem2(inst)
    assert res.converged and res.invariants_ok
    assert np.linalg.norm(res.x - a) <= 1e-5


def test_theorem2_in_lp_above_two():
    a = np.array([0.5, -0.3, 0.2])
    inst = separable_common_minimizer(lp(3.0, 3), 2, a, Halfspace([1.0, 1.0, 0.0], 0.5))
    res, trace = run_theorem2(inst)
    assert res.converged and res.invariants_ok
    assert np.linalg.norm(res.x - a) <= 1e-4
    assert res.residuals["max_gep_residual"] <= 1e-6


def test_two_variational_inequalities():
    p = np.array([0.4, -0.1])
    Bs = [MonotoneMap.affine(Q, -Q @ p) for Q in (np.diag([1.0, 0.0]), np.diag([0.2, 0.8]))]
    inst = ProblemInstance(hilbert(2), Box([-1, -1], [1, 1]), [Identity(2)], [],
                           [(Bifunction.zero(2), B) for B in Bs], x0=[1.0, 1.0],
                           known_common_solution=p)
    res, _ = run_theorem2(inst)
    assert res.converged and np.linalg.norm(res.x - p) <= 1e-5


@pytest.mark.parametrize("q", [1, 3])
def test_theorem4_with_q_problems(q):
    a = np.array([0.5, -0.3, 0.2])
    inst = separable_common_minimizer(hilbert(3), q, a, Ball(a, 1.0))
    if q == 3:
        inst.beta = np.array([0.2, 0.3, 0.5])
    res, _ = run_theorem4(inst)
    assert res.converged and np.linalg.norm(res.x - a) <= 1e-5


def test_theorem4_matches_theorem1_for_two_problems():
    spec = _from_template(3, "full-theorem1")
    r1, t1 = run_theorem1(spec.instance)
    r4, t4 = run_theorem4(spec.instance)
    assert len(t1) == len(t4)
    np.testing.assert_array_equal(t1.iterates(), t4.iterates())


@pytest.mark.parametrize("seed", [0, 1])
def test_fast_path_matches_generic_path(seed):
    spec = _from_template(seed, "full-theorem1")
    fast, tf = run_theorem1(spec.instance, SolverConfig(fast_path=True))
    gen, tg = run_theorem1(spec.instance, SolverConfig(fast_path=False))
    assert len(tf) == len(tg)
    assert np.abs(tf.iterates() - tg.iterates()).max() <= 1e-9


@pytest.mark.parametrize("which,template", [(41, "full-theorem1"), (42, "two-vi"),
                                             (43, "two-vi"), (44, "two-ep")])
def test_corollary_configurations_converge(which, template):
    spec = _from_template(0, template)
    inst = spec.instance
    if which == 43:
        inst.eq_problems = [(Bifunction.zero(inst.space.dim), B) for _, B in inst.eq_problems]
    if which == 44:
        inst.eq_problems = [(f, MonotoneMap.zero(inst.space.dim)) for f, _ in inst.eq_problems]
    res, trace = run_hilbert_corollaries(inst, which)
    assert res.converged and res.invariants_ok
    assert max(res.residuals.values()) <= 1e-6


# --- termination paths ------------------------------------------------------

def test_injected_infeasible_cut():
    res, trace = run_theorem1(box_line(), SolverConfig(inject_cut=3))
    assert res.termination == "infeasible_cut" and not res.converged
    assert res.iterations == 3
    assert trace.records[-1].cut_feasible is False


def test_iteration_cap():
    res, _ = run_theorem1(affine_zero(), SolverConfig(max_iters=5))
    assert res.termination == "max_iters" and res.iterations == 5


def test_gep_residual_is_zero_on_solutions():
    p = np.array([0.4, -0.1])
    B = MonotoneMap.affine(np.eye(2), -p)
    assert gep_residual(WholeSpace(2), Bifunction.zero(2), B, p) == 0.0
    assert gep_residual(WholeSpace(2), Bifunction.zero(2), B, p + 1) > 0.5


# --- baselines --------------------------------------------------------------

def test_baselines_constant_sequence():
    A = IsmOperator(MonotoneMap.zero(2), gamma=0.5)
    C = Box([-1, -1], [1, 1])
    x0 = np.array([0.2, 0.3])
    bt = run_baseline_takahashi_toyoda(C, Identity(2), A, 0.5, 0.1, x0, max_iters=5, tol=-1)
    assert len(bt) == 5 and np.all(bt.iterates == x0)
    bt = run_baseline_iiduka_takahashi(C, Identity(2), A, x0, 0.3, 0.3, 0.1, x0, max_iters=5,
                                       tol=-1)
    assert np.all(bt.iterates == x0)


def test_baselines_projection_case():
    A = IsmOperator(MonotoneMap.zero(2), gamma=0.5)
    line = Affine([[1.0, -1.0]], [0.0])
    S = EuclideanProjection(line)
    bt = run_baseline_takahashi_toyoda(WholeSpace(2), S, A, 0.5, 0.1, [2.0, 0.0], tol=1e-12)
    x = bt.iterates[-1]
    assert line.contains(x, 1e-10) and np.linalg.norm(S(x) - x) <= 1e-10
    bt = run_baseline_iiduka_takahashi(WholeSpace(2), S, A, [2.0, 0.0],
                                       lambda n: 1.0 / (n + 2), 0.25, 0.1, [2.0, 0.0],
                                       max_iters=2000)
    assert np.linalg.norm(S(bt.iterates[-1]) - bt.iterates[-1]) <= 1e-2


def test_baselines_affine_zero_monotone_distance():
    A = IsmOperator(MonotoneMap.affine(np.eye(2), [-1.0, -1.0]), gamma=1.0)
    sol = np.array([1.0, 1.0])
    bt = run_baseline_takahashi_toyoda(WholeSpace(2), Identity(2), A, 0.5, 0.25, [3.0, -1.0],
                                       tol=1e-12, solution=sol)
    assert np.all(np.diff(bt.distances) <= 1e-12)
    assert bt.distances[-1] <= 1e-10
    bt = run_baseline_iiduka_takahashi(WholeSpace(2), Identity(2), A, [3.0, -1.0],
                                       lambda n: 1.0 / (n + 2), 0.25, 0.25, [3.0, -1.0],
                                       max_iters=3000, solution=sol)
    assert np.all(np.diff(bt.distances) <= 1e-12)
    # a harmonic anchor weight converges like 1/n
    assert bt.distances[-1] * len(bt) <= 20.0


def test_baseline_rejects_non_convex_weights():
    A = IsmOperator(MonotoneMap.zero(2), gamma=0.5)
    with pytest.raises(ConfigurationError):
        run_baseline_iiduka_takahashi(WholeSpace(2), Identity(2), A, [0, 0], 0.7, 0.7, 0.1,
                                      [1.0, 0.0], max_iters=3)
