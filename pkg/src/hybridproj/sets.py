"""Closed convex sets, Euclidean and generalized projections, and phi-cuts.

Polyhedral sets (boxes, halfspaces, affine sets and their intersections)
expose a linear description ``G z <= h, E z = e``.  Euclidean projection onto
a polyhedron is solved exactly as a least-distance program with nonnegative
least squares; the generalized projection in l_p geometry is solved through
its Lagrange dual, which is a smooth bound-constrained problem in the
multipliers.  Balls are the only non-polyhedral primitive and are combined
with polyhedra by Dykstra's algorithm (Euclidean) or projected gradient
(generalized).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import orth
from scipy.optimize import brentq

from .geometry import (SpaceSpec, _duality, _norm_sq_diff, _pnorm, duality_map_jacobian)

__all__ = [
    "ProjectionError",
    "InfeasibleError",
    "ConvexSet",
    "WholeSpace",
    "Box",
    "Ball",
    "Halfspace",
    "Affine",
    "Intersection",
    "contains",
    "metric_project",
    "gen_project",
    "project_polyhedron",
    "project_onto_shrunk_set",
    "halfspace_from_phi_cut",
    "CutAccumulator",
    "sample_points",
]

EUCLID_TOL = 1e-10
GEN_TOL = 1e-8


class ProjectionError(RuntimeError):
    """An inner projection solver failed to reach its tolerance."""


class InfeasibleError(ProjectionError):
    """The constraint set handed to a projection is empty."""


Linear = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


class ConvexSet:
    """Base class.  Subclasses are immutable after construction."""

    dim: int

    def project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def linear_constraints(self) -> Optional[Linear]:
        """``(G, h, E, e)`` with the set equal to ``{G z <= h, E z = e}``,
        or ``None`` when the set is not polyhedral."""
        return None

    def distance(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.linalg.norm(x - self.project(x)))

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.distance(x) <= tol

    def extreme_points(self) -> List[np.ndarray]:
        return []

    def anchor(self) -> np.ndarray:
        """Some point of the set, used to centre sampling."""
        return self.project(np.zeros(self.dim))

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(
                f"dimension mismatch: expected ({self.dim},), got {x.shape}")
        return x


def _empty_linear(n: int) -> Linear:
    return np.zeros((0, n)), np.zeros(0), np.zeros((0, n)), np.zeros(0)


@dataclass(frozen=True, eq=False)
class WholeSpace(ConvexSet):
    dim: int

    def project(self, x):
        return self._check(x).copy()

    def distance(self, x):
        self._check(x)
        return 0.0

    def linear_constraints(self):
        return _empty_linear(self.dim)

    def anchor(self):
        return np.zeros(self.dim)


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    """Coordinate box ``lower <= z <= upper``; infinite bounds are allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("box bounds differ in length")
        if np.any(lo > hi) or np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box is empty: some lower bound exceeds its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    def project(self, x):
        return np.clip(self._check(x), self.lower, self.upper)

    def linear_constraints(self):
        n = self.dim
        eye = np.eye(n)
        up = np.isfinite(self.upper)
        lo = np.isfinite(self.lower)
        G = np.vstack([eye[up], -eye[lo]])
        h = np.concatenate([self.upper[up], -self.lower[lo]])
        return G, h, np.zeros((0, n)), np.zeros(0)

    def extreme_points(self):
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            return []
        if self.dim > 10:
            return []
        return [np.array(c, dtype=float)
                for c in product(*zip(self.lower, self.upper))]


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    """Euclidean ball."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=float).ravel())
        if not self.radius >= 0:
            raise ValueError("ball radius must be nonnegative")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.size

    def project(self, x):
        d = self._check(x) - self.center
        nd = np.linalg.norm(d)
        if nd <= self.radius:
            return x.copy()
        return self.center + d * (self.radius / nd)

    def anchor(self):
        return self.center.copy()


@dataclass(frozen=True, eq=False)
class Halfspace(ConvexSet):
    """``{z : <z, a> <= b}``.  ``a = 0`` encodes the whole space (needs b >= 0)."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        if not np.any(a) and self.b < 0:
            raise ValueError("halfspace with zero normal and b < 0 is empty")

    @property
    def dim(self):
        return self.a.size

    @property
    def is_whole_space(self):
        return not np.any(self.a)

    def project(self, x):
        x = self._check(x)
        if self.is_whole_space:
            return x.copy()
        s = x @ self.a - self.b
        if s <= 0:
            return x.copy()
        return x - (s / (self.a @ self.a)) * self.a

    def distance(self, x):
        x = self._check(x)
        if self.is_whole_space:
            return 0.0
        return max(0.0, float(x @ self.a - self.b)) / float(np.linalg.norm(self.a))

    def linear_constraints(self):
        n = self.dim
        if self.is_whole_space:
            return _empty_linear(n)
        return self.a[None, :], np.array([self.b]), np.zeros((0, n)), np.zeros(0)


@dataclass(frozen=True, eq=False)
class Affine(ConvexSet):
    """``{z : A z = b}``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if A.shape[0] != b.size:
            raise ValueError("affine set: A and b disagree in row count")
        z, *_ = np.linalg.lstsq(A, b, rcond=None)
        if np.linalg.norm(A @ z - b) > 1e-9 * (1 + np.linalg.norm(b)):
            raise ValueError("affine set is empty (inconsistent equations)")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "_particular", z)

    @property
    def dim(self):
        return self.A.shape[1]

    def project(self, x):
        x = self._check(x)
        lam, *_ = np.linalg.lstsq(self.A @ self.A.T, self.A @ x - self.b, rcond=None)
        return x - self.A.T @ lam

    def linear_constraints(self):
        n = self.dim
        return np.zeros((0, n)), np.zeros(0), self.A, self.b

    def anchor(self):
        return self._particular.copy()


@dataclass(frozen=True, eq=False)
class Intersection(ConvexSet):
    """Intersection of convex sets.  A witness point certifies nonemptiness."""

    sets: Tuple[ConvexSet, ...]
    witness: Optional[np.ndarray] = None

    def __post_init__(self):
        sets = tuple(self.sets)
        if not sets:
            raise ValueError("intersection of no sets")
        if len({s.dim for s in sets}) != 1:
            raise ValueError("intersection members differ in dimension")
        object.__setattr__(self, "sets", sets)
        if self.witness is not None:
            w = np.asarray(self.witness, dtype=float).ravel()
            object.__setattr__(self, "witness", w)
            for s in sets:
                if not s.contains(w, 1e-9):
                    raise ValueError("witness point is not in every member set")

    @property
    def dim(self):
        return self.sets[0].dim

    def linear_constraints(self):
        parts = [s.linear_constraints() for s in self.sets]
        if any(p is None for p in parts):
            return None
        return _stack_linear(parts)

    def project(self, x):
        return metric_project(self, x)

    def extreme_points(self):
        return [v for s in self.sets for v in s.extreme_points() if self.contains(v, 1e-9)]

    def anchor(self):
        if self.witness is not None:
            return self.witness.copy()
        return self.project(self.sets[0].anchor())


@dataclass(frozen=True, eq=False)
class _Polyhedron(ConvexSet):
    G: np.ndarray
    h: np.ndarray
    E: np.ndarray
    e: np.ndarray

    @property
    def dim(self):
        return self.G.shape[1]

    def linear_constraints(self):
        return self.G, self.h, self.E, self.e

    def project(self, x):
        return project_polyhedron(self._check(x), self.G, self.h, self.E, self.e)


def _stack_linear(parts: Sequence[Linear]) -> Linear:
    return (np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
            np.vstack([p[2] for p in parts]), np.concatenate([p[3] for p in parts]))


# ---------------------------------------------------------------------------
# Euclidean projection onto polyhedra


def _normalize_rows(G, h):
    norms = np.linalg.norm(G, axis=1)
    zero = norms == 0
    if np.any(h[zero] < 0):
        raise InfeasibleError("a zero-normal inequality has negative right-hand side")
    keep = ~zero
    return G[keep] / norms[keep, None], h[keep] / norms[keep]


def _dual_feasible_start(x0, G, h, Ne, zE, W):
    """Drop working rows until the equality-constrained minimizer has
    nonnegative inequality multipliers.  Returns ``(z, W, u)``."""
    W = list(W)
    ke = Ne.shape[1]
    while True:
        N = np.hstack([Ne, G[W].T]) if W else Ne
        if N.shape[1] == 0:
            return x0.copy(), [], np.zeros(0)
        rhs = np.concatenate([Ne.T @ zE, h[W]]) if ke else h[W]
        # z = x0 - N u with N^T z = rhs
        u, *_ = np.linalg.lstsq(N.T @ N, N.T @ x0 - rhs, rcond=None)
        z = x0 - N @ u
        ui = u[ke:]
        if ui.size == 0 or ui.min() >= 0 or not W:
            if np.abs(N.T @ z - rhs).max(initial=0.0) > 1e-9 * (1 + np.abs(rhs).max(initial=0.0)):
                # dependent warm rows; start cold
                if W:
                    W = []
                    continue
            return z, W, u
        del W[int(np.argmin(ui))]


def _goldfarb_idnani(x0, G, h, Ne, zE, working=(), tol=1e-12, max_steps=None):
    """Dual active-set method for ``min 1/2 ||z - x0||^2`` s.t. ``G z <= h``
    and the equalities ``Ne^T z = Ne^T zE`` (columns of ``Ne`` orthonormal).

    Rows of ``G`` are unit vectors.  Every iterate is the minimizer over its
    working set with nonnegative multipliers, so termination (all rows
    satisfied) certifies optimality.
    """
    n = x0.size
    m = G.shape[0]
    ke = Ne.shape[1]
    scale = 1.0 + np.abs(h).max(initial=0.0) + np.abs(x0).max()
    ftol = tol * scale
    W = [i for i in dict.fromkeys(working) if 0 <= i < m]
    z, W, u = _dual_feasible_start(x0, G, h, Ne, zE, W)
    uW = list(u[ke:])
    if m == 0:
        return z, W
    max_steps = max_steps or 10 * (m + n) + 100
    for _ in range(max_steps):
        s = G @ z - h
        p = int(np.argmax(s))
        if s[p] <= ftol:
            return z, W
        up = 0.0
        g = G[p]
        while True:
            N = np.hstack([Ne, G[W].T]) if W else Ne
            if N.shape[1]:
                Q, R = np.linalg.qr(N)
                r = np.linalg.solve(R, Q.T @ g)
                dz = g - Q @ (Q.T @ g)
            else:
                r = np.zeros(0)
                dz = g.copy()
            rW = r[ke:]
            gdz = float(g @ dz)
            viol = float(g @ z - h[p])
            t1 = viol / gdz if gdz > 1e-14 else np.inf
            t2, kblock = np.inf, -1
            for j, (uj, rj) in enumerate(zip(uW, rW)):
                if rj > 1e-14 and uj / rj < t2:
                    t2, kblock = uj / rj, j
            t = min(t1, t2)
            if not np.isfinite(t):
                raise InfeasibleError("polyhedron is empty")
            if np.isfinite(t1):
                z = z - t * dz
            uW = [uj - t * rj for uj, rj in zip(uW, rW)]
            up += t
            if t1 <= t2:
                W.append(p)
                uW.append(up)
                break
            del W[kblock]
            del uW[kblock]
    raise ProjectionError("dual active-set iteration cap exceeded")


def project_polyhedron(x0, G, h, E=None, e=None, tol: float = EUCLID_TOL) -> np.ndarray:
    """Euclidean projection of ``x0`` onto ``{G z <= h, E z = e}``."""
    z, _ = _project_polyhedron(x0, G, h, E, e, tol=tol)
    return z


def _project_polyhedron(x0, G, h, E=None, e=None, working=(), tol=EUCLID_TOL):
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    G = np.asarray(G, dtype=float).reshape(-1, n)
    h = np.asarray(h, dtype=float).ravel()
    E = np.zeros((0, n)) if E is None else np.asarray(E, dtype=float).reshape(-1, n)
    e = np.zeros(0) if e is None else np.asarray(e, dtype=float).ravel()
    if G.shape[0]:
        G, h = _normalize_rows(G, h)
    if E.shape[0]:
        zE, *_ = np.linalg.lstsq(E, e, rcond=None)
        if np.linalg.norm(E @ zE - e) > 1e-9 * (1 + np.linalg.norm(e)):
            raise InfeasibleError("equality constraints are inconsistent")
        Ne = orth(E.T)
    else:
        zE = np.zeros(n)
        Ne = np.zeros((n, 0))
    return _goldfarb_idnani(x0, G, h, Ne, zE, working, tol=min(tol, 1e-12))


# ---------------------------------------------------------------------------
# Dykstra for intersections with non-polyhedral members


def _dykstra(projectors, x0, tol=EUCLID_TOL, max_iters=200000):
    x = np.asarray(x0, dtype=float).copy()
    incs = [np.zeros_like(x) for _ in projectors]
    for _ in range(max_iters):
        moved = 0.0
        for i, proj in enumerate(projectors):
            y = x + incs[i]
            x_new = proj(y)
            inc = y - x_new
            moved = max(moved, np.abs(inc - incs[i]).max(), np.abs(x_new - x).max())
            incs[i] = inc
            x = x_new
        # both the iterate and every correction term must have settled
        if moved <= tol * 1e-2:
            feas = max(np.linalg.norm(x - proj(x)) for proj in projectors)
            if feas <= tol:
                return x
    raise ProjectionError("Dykstra iteration cap exceeded "
                          "(ill-conditioned or empty intersection)")


def _flatten(s: ConvexSet) -> List[ConvexSet]:
    if isinstance(s, Intersection):
        return [m for t in s.sets for m in _flatten(t)]
    return [s]


def metric_project(set_: ConvexSet, x) -> np.ndarray:
    """Euclidean projection onto ``set_``."""
    x = set_._check(x)
    if not isinstance(set_, Intersection):
        return set_.project(x)
    members = _flatten(set_)
    poly = [m for m in members if m.linear_constraints() is not None]
    other = [m for m in members if m.linear_constraints() is None]
    projectors = []
    if poly:
        G, h, E, e = _stack_linear([m.linear_constraints() for m in poly])
        if not other:
            return project_polyhedron(x, G, h, E, e)
        if len(poly) == 1:
            projectors.append(poly[0].project)
        else:
            projectors.append(lambda v, G=G, h=h, E=E, e=e: project_polyhedron(v, G, h, E, e))
    projectors.extend(m.project for m in other)
    if len(projectors) == 1:
        return projectors[0](x)
    return _dykstra(projectors, x)


def contains(set_: ConvexSet, x, tol: float = 0.0) -> bool:
    return set_.contains(set_._check(x), tol)


# ---------------------------------------------------------------------------
# Generalized projection


def _model_hessian(p, z):
    """Hessian of ``0.5 ||z||_p^2`` with its blow-up (p < 2) or degeneracy
    (p > 2) at zero coordinates capped, so that it is finite and positive
    definite."""
    nz = _pnorm(z, p)
    if p == 2.0 or nz == 0.0:
        return np.eye(z.size)
    zz = np.where(np.abs(z) < 1e-8 * nz, np.copysign(1e-8 * nz, z), z)
    H = duality_map_jacobian(p, zz)
    return H + 1e-10 * np.abs(np.diag(H)).max() * np.eye(z.size)


def _gen_project_polyhedral(space, y, G, h, E, e, working=(), tol=GEN_TOL, max_iters=200):
    """Generalized projection onto ``{G z <= h, E z = e}``.

    Feasible projected Newton on ``0.5 ||z||^2 - <z, Jy>``: each step
    minimizes the local quadratic model over the polyhedron, which after a
    Cholesky change of variables is a Euclidean projection, and then
    backtracks along the segment (which stays feasible).  The step vanishes
    exactly at the KKT point.  Returns ``(z, working)``.
    """
    p = space.p
    if p == 2.0:
        return _project_polyhedron(y, G, h, E, e, working=working)
    if G.shape[0]:
        G, h = _normalize_rows(G, h)
    u = _duality(y, p)
    z, W = _project_polyhedron(y, G, h, E, e, working=working)

    def obj(v):
        return 0.5 * _pnorm(v, p) ** 2 - float(v @ u)

    f = obj(z)
    for _ in range(max_iters):
        g = _duality(z, p) - u
        Hm = _model_hessian(p, z)
        L = np.linalg.cholesky(Hm)
        Linv = np.linalg.inv(L)
        Gy = G @ Linv.T
        Ey = E @ Linv.T
        yy, W = _project_polyhedron(-(Linv @ g), Gy, h - G @ z, Ey, np.zeros(E.shape[0]),
                                    working=W)
        d = Linv.T @ yy
        slope = float(g @ d)
        zscale = 1.0 + np.abs(z).max()
        if np.abs(d).max() <= 1e-13 * zscale:
            break
        if slope >= 0.0:
            # the model step is a descent direction in exact arithmetic; a
            # nonnegative slope is rounding along active constraints, which
            # only happens close to the optimum where the full step is safe
            if float(d @ Hm @ d) > 1e-10 * (1.0 + abs(f)):
                break
            z = z + d
            f = obj(z)
            continue
        t = 1.0
        while True:
            cand = z + t * d
            fc = obj(cand)
            if fc <= f + 1e-4 * t * slope:
                break
            # near the optimum f is flat to rounding, but its slope along d
            # is not: still descending, or a tenfold drop in slope, is progress
            slope_c = float((_duality(cand, p) - u) @ d)
            if slope_c <= 0.0 or abs(slope_c) <= 0.1 * abs(slope):
                break
            t *= 0.5
            if t < 1e-12:
                break
        if t < 1e-12:
            break
        z, f = cand, fc
        if t * np.abs(d).max() <= 1e-14 * zscale:
            break
    if p < 2.0:
        z = _dual_polish(p, u, z, G, h, E, e)
    feas = max(np.max(G @ z - h, initial=0.0), np.abs(E @ z - e).max(initial=0.0))
    if feas > tol * (1.0 + np.abs(h).max(initial=0.0)):
        raise ProjectionError(
            f"generalized projection did not reach tolerance (feasibility {feas:.3e})")
    return z, W


def _dual_polish(p, u, z, G, h, E, e, max_iters=20):
    """Refine a primal solution through its multipliers when ``p < 2``.

    ``J`` has an infinite slope at zero coordinates, so a coordinate that
    should vanish but is off by 1e-10 leaves ``Jz`` off by about 1e-5.  With
    the active set fixed, ``z = J_q(u - A^T lam)`` is smooth in ``lam``
    (``q > 2``), and Newton on ``A z(lam) = b`` recovers those coordinates
    exactly.  Returns ``z`` unchanged unless the polished point is a
    feasible KKT point.
    """
    q = p / (p - 1.0)
    scale = 1.0 + np.abs(h).max(initial=0.0) + np.abs(e).max(initial=0.0)
    act = G @ z - h >= -1e-9 * scale
    A = np.vstack([G[act], E])
    b = np.concatenate([h[act], e])
    if A.shape[0] == 0:
        return z
    g = u - _duality(z, p)
    # fit multipliers on the well-conditioned coordinates only
    big = np.abs(z) > 1e-6 * (np.abs(z).max() + 1e-300)
    lam, *_ = np.linalg.lstsq(A[:, big].T, g[big], rcond=None)
    for _ in range(max_iters):
        v = u - A.T @ lam
        zc = _duality(v, q)
        r = A @ zc - b
        if np.abs(r).max() <= 1e-14 * scale:
            break
        Jac = -A @ duality_map_jacobian(q, v) @ A.T
        step, *_ = np.linalg.lstsq(Jac, -r, rcond=None)
        lam = lam + step
    else:
        return z
    n_ineq = int(act.sum())
    if np.any(lam[:n_ineq] < -1e-10 * (1.0 + np.abs(lam).max())):
        return z
    if np.max(G @ zc - h, initial=0.0) > 1e-12 * scale:
        return z
    return zc


def _gen_project_ball(space, ball, y):
    """Generalized projection onto a Euclidean ball (``y`` outside it).

    Optimality reads ``Jz + nu (z - c) = Jy`` with ``nu >= 0`` chosen so that
    ``||z - c|| = R``.  For fixed ``nu`` the equation is the optimality
    condition of a strongly convex problem whose dual
    ``min_s 1/4||s||_q^2 - <s, c> + ||2u - s||^2 / (4 nu)`` is smooth, so it
    is solved by Newton's method; ``nu`` is then found by a bracketed root
    search on the radius.
    """
    p, q = space.p, space.q
    u = _duality(y, p)
    c, R = ball.center, ball.radius
    n = y.size
    dist = np.linalg.norm(y - c)
    if dist <= R * (1.0 + 1e-12):
        # on the sphere up to rounding; the radial snap moves y by < 1e-12 R
        return c + (y - c) * (R / dist)

    def inner(nu, s):
        if p == 2.0:
            return (u + nu * c) / (1.0 + nu), s

        def F(t):
            return 0.25 * _pnorm(t, q) ** 2 - t @ c + (2.0 * u - t) @ (2.0 * u - t) / (4.0 * nu)

        def grad(t):
            return 0.5 * _duality(t, q) - c - (2.0 * u - t) / (2.0 * nu)

        f = F(s)
        g = grad(s)
        for _ in range(100):
            if np.abs(g).max() <= 1e-14 * (1.0 + np.abs(s).max()):
                break
            H = 0.5 * duality_map_jacobian(q, s) + np.eye(n) / (2.0 * nu)
            step = np.linalg.solve(H, -g)
            t = 1.0
            while t > 1e-10:
                cand = s + t * step
                fc, gc = F(cand), grad(cand)
                # near the optimum F is flat to roundoff; fall back on the gradient
                if fc <= f + 1e-4 * t * (g @ step) or np.abs(gc).max() < 0.5 * np.abs(g).max():
                    break
                t *= 0.5
            else:
                break
            s, f, g = cand, fc, gc
            if np.abs(t * step).max() <= 1e-16 * (1.0 + np.abs(s).max()):
                break
        return _duality(0.5 * s, q), s

    state = {"s": 2.0 * u}

    def radius_gap(log_nu):
        z, state["s"] = inner(np.exp(log_nu), state["s"])
        return np.linalg.norm(z - c) - R

    lo, hi = -2.0, 2.0
    while radius_gap(lo) <= 0:
        lo -= 4.0
        if lo < -200:
            raise ProjectionError("ball projection bracket search failed")
    while radius_gap(hi) >= 0:
        hi += 4.0
        if hi > 200:
            raise ProjectionError("ball projection bracket search failed")
    log_nu = brentq(radius_gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                    maxiter=500)
    z, _ = inner(np.exp(log_nu), state["s"])
    # snap onto the sphere; the correction is at roundoff level
    d = z - c
    return c + d * (R / np.linalg.norm(d))


def _bregman_dykstra(space, projectors, y, tol=GEN_TOL * 1e-2, max_iters=100000):
    """Dykstra's algorithm with generalized projections.

    Corrections live in the dual space: ``v = J^{-1}(Jx + q_i)``,
    ``x = Pi_i(v)``, ``q_i = Jv - Jx``.  With J the identity this is the
    Euclidean algorithm.
    """
    p, q = space.p, space.q
    x = np.asarray(y, dtype=float).copy()
    corr = [np.zeros_like(x) for _ in projectors]
    for _ in range(max_iters):
        moved = 0.0
        for i, proj in enumerate(projectors):
            Jx = _duality(x, p)
            v = _duality(Jx + corr[i], q)
            x_new = proj(v)
            c_new = _duality(v, p) - _duality(x_new, p)
            moved = max(moved, np.abs(c_new - corr[i]).max(), np.abs(x_new - x).max())
            corr[i] = c_new
            x = x_new
        if moved <= tol:
            return x
    raise ProjectionError("generalized Dykstra iteration cap exceeded")


def gen_project(space: SpaceSpec, set_: ConvexSet, y, generic: bool = False) -> np.ndarray:
    """Generalized projection: the minimizer of ``phi(., y)`` over ``set_``.

    In Hilbert space this is the metric projection.  ``generic=True`` forces
    the solver used for non-Hilbert geometries even in Hilbert space; it
    exists so the two code paths can be compared.
    """
    y = set_._check(y)
    space.check(y)
    if set_.contains(y, 0.0):
        return y.copy()
    if space.is_hilbert and not generic:
        return metric_project(set_, y)
    lin = set_.linear_constraints()
    if lin is not None:
        z, _ = _gen_project_polyhedral(space, y, *lin)
        return z
    if isinstance(set_, Ball):
        return _gen_project_ball(space, set_, y)
    members = _flatten(set_)
    poly = [m for m in members if m.linear_constraints() is not None]
    other = [m for m in members if m.linear_constraints() is None]
    projectors = []
    if poly:
        lin = _stack_linear([m.linear_constraints() for m in poly])
        projectors.append(lambda v: gen_project(space, _Polyhedron(*lin), v, generic))
    projectors.extend(lambda v, m=m: gen_project(space, m, v, generic) for m in other)
    return _bregman_dykstra(space, projectors, y)


# ---------------------------------------------------------------------------
# Shrinking sets


def halfspace_from_phi_cut(space: SpaceSpec, w, x, generic: bool = False) -> Halfspace:
    """The set ``{z : phi(z, w) <= phi(z, x)}`` as ``{z : <z, a> <= b}``.

    Expanding both sides the ``||z||^2`` terms cancel, leaving
    ``2<z, Jx - Jw> <= ||x||^2 - ||w||^2``.  The right side is evaluated
    without cancellation, since ``w`` approaches ``x`` as the method converges.
    ``generic=True`` uses the duality-map form even in Hilbert space.
    """
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    space.check(w, x)
    if np.array_equal(w, x):
        return Halfspace(np.zeros(space.dim), 0.0)
    if space.is_hilbert and not generic:
        return Halfspace(2.0 * (x - w), float((x - w) @ (x + w)))
    a = 2.0 * (_duality(x, space.p) - _duality(w, space.p))
    return Halfspace(a, _norm_sq_diff(x, w, space.p))


@dataclass(eq=False)
class CutAccumulator:
    """A base set plus an append-only list of halfspace cuts.

    ``max_cuts`` keeps only the most recent cuts; it is off by default since
    dropping cuts breaks the nesting of the shrinking sets.
    """

    space: SpaceSpec
    base: ConvexSet
    max_cuts: Optional[int] = None
    _A: np.ndarray = field(init=False, repr=False)
    _b: np.ndarray = field(init=False, repr=False)
    _count: int = field(init=False, default=0)
    _working: list = field(init=False, default_factory=list)

    def __post_init__(self):
        self._A = np.zeros((16, self.space.dim))
        self._b = np.zeros(16)

    def __len__(self):
        return self._count

    @property
    def cuts(self) -> List[Halfspace]:
        return [Halfspace(a, b) for a, b in zip(*self.arrays())]

    def arrays(self):
        lo = 0 if self.max_cuts is None else max(0, self._count - self.max_cuts)
        return self._A[lo:self._count], self._b[lo:self._count]

    def append(self, cut: Halfspace) -> None:
        if self._count == self._A.shape[0]:
            self._A = np.vstack([self._A, np.zeros_like(self._A)])
            self._b = np.concatenate([self._b, np.zeros_like(self._b)])
        self._A[self._count] = cut.a
        self._b[self._count] = cut.b
        self._count += 1

    def contains(self, x, tol: float = 0.0) -> bool:
        if not self.base.contains(x, tol):
            return False
        A, b = self.arrays()
        norms = np.linalg.norm(A, axis=1)
        live = norms > 0
        return bool(np.all((A[live] @ x - b[live]) / norms[live] <= tol))

    def as_set(self) -> ConvexSet:
        return Intersection((self.base,) + tuple(self.cuts))

    def project(self, x0, generic: bool = False) -> np.ndarray:
        """Generalized projection of ``x0`` onto base intersected with all cuts."""
        x0 = np.asarray(x0, dtype=float)
        A, b = self.arrays()
        live = np.linalg.norm(A, axis=1) > 0
        if np.any(b[~live] < 0):
            raise InfeasibleError("a cut with zero normal excludes everything")
        A, b = A[live], b[live]
        lin = self.base.linear_constraints()
        if lin is not None:
            Gb, hb, E, e = lin
            G = np.vstack([Gb, A])
            h = np.concatenate([hb, b])
            if self.space.is_hilbert and not generic:
                z, self._working = _project_polyhedron(x0, G, h, E, e,
                                                       working=self._working)
                return z
            if np.all(G @ x0 <= h) and (E.shape[0] == 0 or np.allclose(E @ x0, e, rtol=0, atol=0)):
                return x0.copy()
            z, self._working = _gen_project_polyhedral(self.space, x0, G, h, E, e,
                                                       working=self._working)
            return z
        target = Intersection((self.base,) + tuple(Halfspace(a, bb) for a, bb in zip(A, b)))
        return gen_project(self.space, target, x0, generic=generic)


def project_onto_shrunk_set(space: SpaceSpec, base: ConvexSet, cuts: Sequence[Halfspace],
                            x0, generic: bool = False) -> np.ndarray:
    acc = CutAccumulator(space, base)
    for c in cuts:
        acc.append(c)
    return acc.project(np.asarray(x0, dtype=float), generic=generic)


def sample_points(set_: ConvexSet, rng: np.random.Generator, count: int,
                  radius: float = 3.0) -> List[np.ndarray]:
    """Points of ``set_``: extreme points (if any) plus projections of random
    Gaussian points, some of which land in the interior."""
    pts = list(set_.extreme_points())
    centre = set_.anchor()
    while len(pts) < count:
        g = centre + radius * rng.standard_normal(set_.dim) * rng.uniform(0.05, 1.0)
        pts.append(metric_project(set_, g))
    return pts[:max(count, len(set_.extreme_points()))]
