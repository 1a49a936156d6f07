import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridproj.geometry import ConfigurationError, hilbert, lp
from hybridproj.operators import (Averaged, Bifunction, EuclideanProjection,
                                  GeneralizedProjection, Identity, IsmOperator, MonotoneMap,
                                  ResolventOf, check_bifunction, check_ism,
                                  check_relatively_nonexpansive, gep_margin,
                                  theorem3_precondition)
from hybridproj.sets import Affine, Ball, Box, Halfspace, Intersection, sample_points

from .conftest import finite_vectors


def _psd(rng, n, rank=None):
    M = rng.standard_normal((n, rank or n))
    return M @ M.T


# --- monotone and ism maps -----------------------------------------------------

def test_non_monotone_map_rejected():
    with pytest.raises(ConfigurationError):
        MonotoneMap.affine(np.diag([1.0, -0.5]))


def test_skew_map_is_monotone():
    G = MonotoneMap.affine([[0.0, 1.0], [-1.0, 0.0]])
    x, y = np.array([1.0, 2.0]), np.array([-3.0, 0.5])
    assert (x - y) @ (G(x) - G(y)) == pytest.approx(0.0, abs=1e-14)


def test_check_ism_examples():
    for op in (IsmOperator(MonotoneMap.affine(np.eye(2)), gamma=1.0),
               IsmOperator(MonotoneMap.affine(np.diag([1.0, 2.0])), gamma=0.5),
               IsmOperator(MonotoneMap.zero(2), gamma=0.3)):
        rep = check_ism(op, hilbert(2), samples=1000)
        assert rep.violations == 0 and rep.ok


def test_check_ism_detects_too_large_gamma():
    op = IsmOperator(MonotoneMap.affine(np.diag([1.0, 2.0])), gamma=0.9, validate=False)
    rep = check_ism(op, hilbert(2), samples=200)
    assert rep.violations > 0 and rep.worst_margin < 0
    with pytest.raises(ConfigurationError):
        IsmOperator(MonotoneMap.affine(np.diag([1.0, 2.0])), gamma=0.9)


def test_check_ism_rejects_no_samples():
    with pytest.raises(ValueError):
        check_ism(IsmOperator(MonotoneMap.zero(2), gamma=0.5), None, samples=0)


@pytest.mark.parametrize("gamma", [0.0, 1.5, -0.1])
def test_gamma_range(gamma):
    with pytest.raises(ConfigurationError):
        IsmOperator(MonotoneMap.zero(2), gamma=gamma)


def test_default_gamma_is_inverse_top_eigenvalue(rng):
    Q = _psd(rng, 3) + 2 * np.eye(3)
    op = IsmOperator(MonotoneMap.affine(Q))
    assert op.gamma == pytest.approx(min(1 / np.linalg.eigvalsh(Q)[-1], 0.99))


@settings(max_examples=40)
@given(st.integers(0, 2 ** 31), finite_vectors(3), finite_vectors(3))
def test_ism_implies_lipschitz(seed, x, y):
    Q = _psd(np.random.default_rng(seed), 3)
    op = IsmOperator(MonotoneMap.affine(Q, np.ones(3)))
    lhs = np.linalg.norm(op(x) - op(y))
    assert lhs <= np.linalg.norm(x - y) / op.gamma + 1e-8 * (1 + lhs)


def test_zero_set_is_exact(rng):
    Q = _psd(rng, 3, rank=2)
    w = rng.standard_normal(3)
    G = MonotoneMap.affine(Q, -Q @ w)
    Z = G.zero_set()
    for z in sample_points(Z, rng, 20):
        assert np.abs(G(z)).max() <= 1e-10
    assert MonotoneMap.affine(np.zeros((2, 2)), [1.0, 0.0]).zero_set() is None


# --- fixed-point maps --------------------------------------------------------------

def test_relatively_nonexpansive_examples():
    sp = hilbert(2)
    rep = check_relatively_nonexpansive(Identity(2), sp)
    assert rep.worst_margin == 0.0 and rep.ok
    rep = check_relatively_nonexpansive(EuclideanProjection(Ball(np.zeros(2), 1.0)), sp)
    assert rep.worst_margin <= 1e-10
    line = Affine([[1.0, -1.0]], [0.0])
    rep = check_relatively_nonexpansive(Averaged(0.5, EuclideanProjection(line)), sp)
    assert rep.worst_margin <= 1e-10
    assert rep.extra["lipschitz_estimate"] <= 1.0 + 1e-12


@pytest.mark.parametrize("sp", [lp(1.5, 3), lp(3.0, 3)])
def test_generalized_projection_maps_are_relatively_nonexpansive(sp):
    S = Intersection((Box(-np.ones(3), np.ones(3)), Halfspace([1, 1, 1], 0.5)))
    T = GeneralizedProjection(S)
    assert check_relatively_nonexpansive(T, sp, samples=60).worst_margin <= 1e-8
    assert check_relatively_nonexpansive(Averaged(0.3, T), sp, samples=60).worst_margin <= 1e-8


def test_euclidean_projection_can_fail_outside_hilbert():
    # the Euclidean projection is not relatively nonexpansive in l_p;
    # the generalized projection is the catalog variant for that case
    S = Affine([[1.0, 3.0]], [0.0])
    rep = check_relatively_nonexpansive(EuclideanProjection(S), lp(1.2, 2), samples=300)
    assert rep.worst_margin > 1e-6


def test_resolvent_map_fixed_set(rng):
    Q = _psd(rng, 3, rank=1)
    T = ResolventOf(MonotoneMap.affine(Q), 0.7)
    for p in sample_points(T.fixed_set, rng, 5):
        np.testing.assert_allclose(T(p), p, atol=1e-12)
    assert check_relatively_nonexpansive(T, hilbert(3)).ok
    with pytest.raises(ConfigurationError):
        T(np.zeros(3), lp(1.5, 3))
    with pytest.raises(ConfigurationError):
        ResolventOf(MonotoneMap.affine(np.eye(3)), 0.0)


def test_averaged_weight_range():
    with pytest.raises(ConfigurationError):
        Averaged(1.0, Identity(2))


# --- bifunctions --------------------------------------------------------------

@pytest.mark.parametrize("make", [lambda rng: Bifunction.zero(3),
                                  lambda rng: Bifunction.vi(MonotoneMap.affine(
                                      _psd(rng, 3) + np.array([[0, 1, 0], [-1, 0, 0], [0, 0, 0]]))),
                                  lambda rng: Bifunction.separable(_psd(rng, 3), rng.standard_normal(3))])
def test_bifunction_conditions(make, rng):
    f = make(rng)
    rep = check_bifunction(f, samples=1000)
    assert rep.ok and rep.extra["a1_worst"] == 0.0


def test_separable_bifunction_values():
    f = Bifunction.separable(np.eye(2), [1.0, 0.0])
    assert f([1.0, 0.0], [0.0, 0.0]) == pytest.approx(0.5)
    np.testing.assert_allclose(f([1.0, 0.0], np.array([[0.0, 0.0], [2.0, 0.0]])), [0.5, 0.5])


def test_vi_solution_set_is_exact_on_a_grid(rng):
    # symmetric PSD G with a planted zero inside the box
    C = Box(-np.ones(2), np.ones(2))
    w = np.array([0.3, -0.2])
    Q = np.array([[1.0, 1.0], [1.0, 1.0]])
    f = Bifunction.vi(MonotoneMap.affine(Q, -Q @ w))
    S = f.solution_set(C)
    g = np.linspace(-1, 1, 41)
    Y = np.array([[a, b] for a in g for b in g])
    for z in sample_points(S, rng, 10):
        assert gep_margin(f, MonotoneMap.zero(2), C, z, Y) >= -1e-8
    # a point of C off the solution set violates the inequality somewhere
    assert gep_margin(f, MonotoneMap.zero(2), C, np.array([0.9, 0.9]), Y) < -1e-3


def test_skew_vi_has_no_closed_form_solution_set():
    f = Bifunction.vi(MonotoneMap.affine([[0.0, 1.0], [-1.0, 0.0]]))
    assert f.solution_set(Box(-np.ones(2), np.ones(2))) is None
    assert Bifunction.zero(2).solution_set(Box(-np.ones(2), np.ones(2))) is not None


# --- precondition for the A-family step ---------------------------------------------

def test_precondition_examples():
    C = Box([0.0, 0.0], [2.0, 2.0])
    assert theorem3_precondition(IsmOperator(MonotoneMap.zero(2), gamma=0.5), C, [1.0, 1.0])
    A = IsmOperator(MonotoneMap.affine(np.eye(2), [-1.0, -1.0]), gamma=1.0)
    assert theorem3_precondition(A, C, [1.0, 1.0])
    assert not theorem3_precondition(A, C, [0.0, 0.0])
    # the violating points sit near the witness corner, not near (1, 1)
    Aw = A(np.zeros(2))
    x = np.array([1.01, 1.01])
    assert np.linalg.norm(A(x)) <= np.linalg.norm(A(x) - Aw)
    x = np.zeros(2)
    assert np.linalg.norm(A(x)) > np.linalg.norm(A(x) - Aw)


def test_precondition_rejects_witness_outside_set():
    with pytest.raises(ValueError):
        theorem3_precondition(IsmOperator(MonotoneMap.zero(2), gamma=0.5), Box([0, 0], [1, 1]),
                              [5.0, 5.0])
