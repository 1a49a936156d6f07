"""Catalog of monotone maps, inverse-strongly-monotone operators,
relatively nonexpansive maps and bifunctions.

Every entry knows its exact solution set (zero set, fixed-point set or
equilibrium set) so that solvers can be checked against an oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import (ConfigurationError, SpaceSpec, _duality, _pnorm,
                       lyapunov_phi)
from .sets import (Affine, ConvexSet, InfeasibleError, Intersection, WholeSpace,
                   gen_project, metric_project, sample_points)

__all__ = [
    "MonotoneMap",
    "IsmOperator",
    "FixedPointMap",
    "Identity",
    "EuclideanProjection",
    "GeneralizedProjection",
    "Averaged",
    "ResolventOf",
    "Unchecked",
    "Bifunction",
    "CheckReport",
    "check_ism",
    "check_relatively_nonexpansive",
    "check_bifunction",
    "gep_margin",
    "theorem3_precondition",
]


@dataclass
class CheckReport:
    """Outcome of a sampled inequality check.

    The sign convention of ``worst_margin`` is stated by each check.
    ``note`` documents what the universal quantifier was replaced by.
    """

    samples: int
    violations: int
    worst_margin: float
    tolerance: float
    note: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.violations == 0


# ---------------------------------------------------------------------------
# Monotone maps


@dataclass(frozen=True, eq=False)
class MonotoneMap:
    """Affine monotone map ``x -> Q x + q`` (values are dual vectors).

    ``kind`` records how the map was built: ``"zero"``, ``"affine"`` or
    ``"quadratic_gradient"`` (the gradient of ``1/2 (x-a)^T H (x-a)``).
    """

    Q: np.ndarray
    q: np.ndarray
    kind: str = "affine"

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        q = np.asarray(self.q, dtype=float).ravel()
        if Q.shape != (q.size, q.size):
            raise ValueError(f"monotone map: Q has shape {Q.shape}, q has {q.size} entries")
        S = 0.5 * (Q + Q.T)
        lam = np.linalg.eigvalsh(S)
        if lam[0] < -1e-10 * max(1.0, abs(lam[-1])):
            raise ConfigurationError(
                f"map is not monotone: symmetric part has eigenvalue {lam[0]:.3e}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)

    @classmethod
    def zero(cls, dim: int) -> "MonotoneMap":
        return cls(np.zeros((dim, dim)), np.zeros(dim), "zero")

    @classmethod
    def affine(cls, Q, q=None) -> "MonotoneMap":
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        q = np.zeros(Q.shape[0]) if q is None else q
        return cls(Q, q, "affine")

    @classmethod
    def quadratic_gradient(cls, H, a) -> "MonotoneMap":
        H = np.atleast_2d(np.asarray(H, dtype=float))
        if not np.allclose(H, H.T, atol=1e-12):
            raise ConfigurationError("quadratic Hessian must be symmetric")
        a = np.asarray(a, dtype=float).ravel()
        return cls(H, -H @ a, "quadratic_gradient")

    @property
    def dim(self) -> int:
        return self.q.size

    @property
    def is_zero(self) -> bool:
        return not np.any(self.Q) and not np.any(self.q)

    @property
    def is_symmetric(self) -> bool:
        return np.allclose(self.Q, self.Q.T, atol=1e-14)

    def __call__(self, x) -> np.ndarray:
        return self.Q @ np.asarray(x, dtype=float) + self.q

    def sym_lambda_max(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))[-1])

    def zero_set(self) -> Optional[Affine]:
        """``{x : Qx + q = 0}``, or ``None`` when it is empty."""
        try:
            return Affine(self.Q, -self.q)
        except ValueError:
            return None

    def to_json(self) -> dict:
        if self.is_zero:
            return {"type": "zero"}
        return {"type": "affine", "Q": self.Q.tolist(), "q": self.q.tolist()}


@dataclass(frozen=True, eq=False)
class IsmOperator:
    """A gamma-inverse-strongly-monotone operator.

    When ``gamma`` is omitted it defaults to ``1/lambda_max`` of the
    symmetric part of ``Q``, clipped into (0, 1).  Either way the inequality
    is validated on random samples at construction.
    """

    map: MonotoneMap
    gamma: Optional[float] = None
    validate: bool = True

    def __post_init__(self):
        if self.gamma is None:
            lmax = self.map.sym_lambda_max()
            g = 0.99 if lmax <= 0 else min(1.0 / lmax, 0.99)
            object.__setattr__(self, "gamma", float(g))
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if self.validate:
            rep = check_ism(self, None, samples=200)
            if not rep.ok:
                raise ConfigurationError(
                    f"operator is not {self.gamma:.4g}-inverse strongly monotone "
                    f"(worst sampled margin {rep.worst_margin:.3e})")

    @property
    def dim(self) -> int:
        return self.map.dim

    def __call__(self, x) -> np.ndarray:
        return self.map(x)

    def zero_set(self) -> Optional[Affine]:
        return self.map.zero_set()


def check_ism(op: IsmOperator, space: Optional[SpaceSpec], samples: int = 1000,
              seed: int = 0, tol: float = 1e-8,
              C: Optional[ConvexSet] = None) -> CheckReport:
    """Sample ``<x - y, Ax - Ay> - gamma ||Ax - Ay||_*^2`` on random pairs.

    ``worst_margin`` is the smallest sampled margin (scaled by
    ``max(1, ||x - y||^2)``); margins below ``-tol`` count as violations.
    Pairs are drawn from ``C`` when given, otherwise from R^n at
    log-uniform scales.  ``space=None`` means Euclidean norms.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng(seed)
    qexp = 2.0 if space is None else space.q
    if C is not None:
        pts = sample_points(C, rng, 2 * samples)
    worst = np.inf
    bad = 0
    for k in range(samples):
        if C is not None:
            x, y = pts[(2 * k) % len(pts)], pts[(2 * k + 1) % len(pts)]
        else:
            scale = 10.0 ** rng.uniform(-2, 2)
            x = rng.standard_normal(op.dim) * scale
            y = rng.standard_normal(op.dim) * scale
        d = op(x) - op(y)
        m = (x - y) @ d - op.gamma * _pnorm(d, qexp) ** 2
        m /= max(1.0, (x - y) @ (x - y))
        worst = min(worst, m)
        bad += m < -tol
    where = "sampled points of C" if C is not None else "random pairs at log-uniform scales"
    return CheckReport(samples, int(bad), float(worst), tol,
                       f"{where} stand in for all x, y")


# ---------------------------------------------------------------------------
# Fixed-point maps


class FixedPointMap:
    """Base class.  ``T(x, space)`` evaluates the map; ``fixed_set`` is exact."""

    fixed_set: ConvexSet
    checked: bool = True

    def __call__(self, x, space: Optional[SpaceSpec] = None) -> np.ndarray:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Identity(FixedPointMap):
    dim: int

    @property
    def fixed_set(self):
        return WholeSpace(self.dim)

    def __call__(self, x, space=None):
        return np.array(x, dtype=float)

    def to_json(self):
        return {"type": "identity"}


@dataclass(frozen=True, eq=False)
class EuclideanProjection(FixedPointMap):
    """Metric projection; quasi-nonexpansive in Hilbert space only."""

    set: ConvexSet

    @property
    def fixed_set(self):
        return self.set

    def __call__(self, x, space=None):
        return metric_project(self.set, x)

    def to_json(self):
        from .harness import set_to_json
        return {"type": "projection", "set": set_to_json(self.set)}


@dataclass(frozen=True, eq=False)
class GeneralizedProjection(FixedPointMap):
    """Generalized projection; relatively nonexpansive in every geometry."""

    set: ConvexSet

    @property
    def fixed_set(self):
        return self.set

    def __call__(self, x, space=None):
        if space is None:
            return metric_project(self.set, x)
        return gen_project(space, self.set, x)

    def to_json(self):
        from .harness import set_to_json
        return {"type": "gen_projection", "set": set_to_json(self.set)}


@dataclass(frozen=True, eq=False)
class Averaged(FixedPointMap):
    """``x -> J^{-1}(t Jx + (1 - t) J inner(x))``, a plain convex
    combination in Hilbert space."""

    t: float
    inner: FixedPointMap

    def __post_init__(self):
        if not 0.0 < self.t < 1.0:
            raise ConfigurationError("averaging weight must lie in (0, 1)")

    @property
    def fixed_set(self):
        return self.inner.fixed_set

    @property
    def checked(self):
        return self.inner.checked

    def __call__(self, x, space=None):
        x = np.asarray(x, dtype=float)
        tx = self.inner(x, space)
        if space is None or space.is_hilbert:
            return self.t * x + (1.0 - self.t) * tx
        p = space.p
        return _duality(self.t * _duality(x, p) + (1.0 - self.t) * _duality(tx, p), space.q)

    def to_json(self):
        return {"type": "averaged", "t": self.t, "inner": self.inner.to_json()}


@dataclass(frozen=True, eq=False)
class ResolventOf(FixedPointMap):
    """``(I + r G)^{-1}`` for an affine monotone ``G``; Hilbert space only."""

    G: MonotoneMap
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ConfigurationError("resolvent parameter must be positive")
        if self.G.zero_set() is None:
            raise ConfigurationError("resolvent map needs a nonempty zero set")

    @property
    def fixed_set(self):
        return self.G.zero_set()

    def __call__(self, x, space=None):
        if space is not None and not space.is_hilbert:
            raise ConfigurationError("resolvent-of maps are only supported in Hilbert space")
        n = self.G.dim
        return np.linalg.solve(np.eye(n) + self.r * self.G.Q,
                               np.asarray(x, dtype=float) - self.r * self.G.q)

    def to_json(self):
        return {"type": "resolvent", "map": self.G.to_json(), "r": self.r}


@dataclass(frozen=True, eq=False)
class Unchecked(FixedPointMap):
    """A user-supplied map whose relative nonexpansiveness is not verified."""

    fn: Callable
    fixed_set: ConvexSet
    checked: bool = False

    def __call__(self, x, space=None):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)

    def to_json(self):
        raise TypeError("unchecked maps cannot be serialized")


def check_relatively_nonexpansive(T: FixedPointMap, space: SpaceSpec, samples: int = 200,
                                  seed: int = 0, tol: float = 1e-8,
                                  radius: float = 3.0) -> CheckReport:
    """Sample ``phi(p, Tx) - phi(p, x)`` for ``p`` in the fixed set.

    Also records a finite Lipschitz estimate of ``T`` on the samples.
    """
    rng = np.random.default_rng(seed)
    F = T.fixed_set
    ps = sample_points(F, rng, samples, radius)
    centre = F.anchor()
    worst = -np.inf
    bad = 0
    lip = 0.0
    prev = None
    for p in ps[:samples]:
        x = centre + radius * rng.standard_normal(space.dim)
        tx = T(x, space)
        m = lyapunov_phi(space, p, tx) - lyapunov_phi(space, p, x)
        worst = max(worst, m)
        bad += m > tol
        if prev is not None:
            dx = np.linalg.norm(x - prev[0])
            if dx > 0:
                lip = max(lip, np.linalg.norm(tx - prev[1]) / dx)
        prev = (x, tx)
    return CheckReport(len(ps[:samples]), int(bad), float(worst), tol,
                       "fixed points from projections of random points; x random",
                       {"lipschitz_estimate": lip, "checked_variant": T.checked})


# ---------------------------------------------------------------------------
# Bifunctions


@dataclass(frozen=True, eq=False)
class Bifunction:
    """Equilibrium bifunction ``f(x, y)``.

    kinds
    -----
    ``zero``        f = 0
    ``vi``          f(x, y) = <Gx, y - x>
    ``separable``   f(x, y) = h(y) - h(x),  h(z) = 1/2 (z-a)^T H (z-a)

    ``representative`` is the monotone map ``G`` for which the resolvent
    inequality is equivalent to a variational inequality with ``G``.
    """

    kind: str
    representative: MonotoneMap
    H: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None

    @classmethod
    def zero(cls, dim: int) -> "Bifunction":
        return cls("zero", MonotoneMap.zero(dim))

    @classmethod
    def vi(cls, G: MonotoneMap) -> "Bifunction":
        return cls("vi", G)

    @classmethod
    def separable(cls, H, a) -> "Bifunction":
        H = np.atleast_2d(np.asarray(H, dtype=float))
        a = np.asarray(a, dtype=float).ravel()
        return cls("separable", MonotoneMap.quadratic_gradient(H, a), H, a)

    @property
    def dim(self) -> int:
        return self.representative.dim

    def h(self, z) -> np.ndarray:
        d = np.asarray(z, dtype=float) - self.a
        if d.ndim == 1:
            return 0.5 * d @ self.H @ d
        return 0.5 * np.einsum("ij,jk,ik->i", d, self.H, d)

    def __call__(self, x, y):
        """``f(x, y)``; ``y`` may be a stack of points (one per row)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "zero":
            return np.zeros(y.shape[:-1]) if y.ndim > 1 else 0.0
        if self.kind == "vi":
            return (y - x) @ self.representative(x)
        return self.h(y) - self.h(x)

    def solution_set(self, C: ConvexSet) -> Optional[ConvexSet]:
        """Exact EP(f) over ``C`` when it is an affine slice of ``C``.

        Available for ``zero`` (all of C), ``separable`` and symmetric
        ``vi`` bifunctions whose stationarity system meets ``C``.
        """
        if self.kind == "zero":
            return C
        G = self.representative
        if not G.is_symmetric:
            return None
        Z = G.zero_set()
        if Z is None:
            return None
        S = Intersection((C, Z))
        try:
            w = metric_project(S, C.anchor())
        except InfeasibleError:
            return None
        return Intersection((C, Z), witness=w)

    def to_json(self) -> dict:
        if self.kind == "zero":
            return {"type": "zero"}
        if self.kind == "vi":
            return {"type": "vi", "map": self.representative.to_json()}
        return {"type": "separable", "H": self.H.tolist(), "a": self.a.tolist()}


def check_bifunction(f: Bifunction, samples: int = 1000, seed: int = 0,
                     tol: float = 1e-12) -> CheckReport:
    """Sample conditions (A1) ``f(x, x) = 0`` and (A2) ``f(x,y) + f(y,x) <= 0``."""
    rng = np.random.default_rng(seed)
    worst_a1 = 0.0
    worst_a2 = -np.inf
    for _ in range(samples):
        x = rng.standard_normal(f.dim) * 3
        y = rng.standard_normal(f.dim) * 3
        worst_a1 = max(worst_a1, abs(float(f(x, x))))
        worst_a2 = max(worst_a2, float(f(x, y) + f(y, x)))
    bad = int(worst_a1 > 0.0) + int(worst_a2 > tol)
    return CheckReport(samples, bad, worst_a2, tol, "random pairs",
                       {"a1_worst": worst_a1})


def gep_margin(f: Bifunction, B: MonotoneMap, C: ConvexSet, z, ys) -> float:
    """``min_y f(z, y) + <Bz, y - z>`` over the sample ``ys`` (one per row)."""
    z = np.asarray(z, dtype=float)
    ys = np.atleast_2d(ys)
    vals = f(z, ys) + (ys - z) @ B(z)
    return float(np.min(vals))


def theorem3_precondition(A: IsmOperator, C: ConvexSet, F_witness, samples: int = 400,
                          seed: int = 0, space: Optional[SpaceSpec] = None,
                          tol: float = 1e-10) -> bool:
    """Check ``||Ax|| <= ||Ax - A w|| + tol`` for sampled ``x`` in ``C``.

    When it holds with ``w`` a common solution, VI(A, C) membership of ``w``
    forces ``Aw = 0``.
    """
    w = np.asarray(F_witness, dtype=float)
    if not C.contains(w, 1e-9):
        raise ValueError("witness is not in C")
    qexp = 2.0 if space is None else space.q
    rng = np.random.default_rng(seed)
    Aw = A(w)
    pts = sample_points(C, rng, samples) + [w]
    for x in pts:
        Ax = A(x)
        if _pnorm(Ax, qexp) > _pnorm(Ax - Aw, qexp) + tol:
            return False
    return True
