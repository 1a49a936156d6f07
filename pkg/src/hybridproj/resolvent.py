"""Resolvent of a generalized equilibrium problem.

For an anchor ``x`` the resolvent returns the unique ``z`` in ``C`` with

    f(z, y) + <Bx, y - z> + (1/r) <y - z, Jz - Jx> >= 0   for all y in C.

For catalog bifunctions this is the variational inequality
``<M(z), y - z> >= 0`` with ``M(z) = G z + Bx + (Jz - Jx)/r``, where ``G`` is
the bifunction's representative operator.  Over polyhedral sets the VI is
solved by an active-set method whose subproblems are Newton solves of the
KKT system; a projected fixed-point iteration (with extragradient fallback)
handles everything else and rescues the rare active-set failure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (ConfigurationError, SpaceSpec, _duality, _pnorm,
                       duality_map_jacobian, lyapunov_phi)
from .operators import Bifunction, CheckReport, MonotoneMap
from .sets import Ball, Box, ConvexSet, metric_project, sample_points

__all__ = [
    "ResolventError",
    "ResolventProblem",
    "solve_resolvent",
    "resolvent_margin",
    "verification_sample",
    "check_firm_nonexpansiveness",
    "check_resolvent_phi_inequality",
]


class ResolventError(RuntimeError):
    """The inner solver failed to produce a certified resolvent point."""


@dataclass(frozen=True, eq=False)
class ResolventProblem:
    space: SpaceSpec
    C: ConvexSet
    f: Bifunction
    B: MonotoneMap
    r: float
    x: np.ndarray
    r_min: float = 1e-8

    def __post_init__(self):
        if not self.r_min > 0:
            raise ConfigurationError("the lower bound on r must be positive")
        if not self.r >= self.r_min:
            raise ConfigurationError(f"r = {self.r} is below the lower bound {self.r_min}")
        x = np.asarray(self.x, dtype=float)
        self.space.check(x)
        if self.f.dim != self.space.dim or self.B.dim != self.space.dim:
            raise ValueError("bifunction, map and space dimensions disagree")
        object.__setattr__(self, "x", x)

    def with_anchor(self, x) -> "ResolventProblem":
        return ResolventProblem(self.space, self.C, self.f, self.B, self.r, x, self.r_min)

    def _jx(self) -> np.ndarray:
        return _duality(self.x, self.space.p)

    def vi_map(self, z, jx=None) -> np.ndarray:
        """``M(z) = G z + Bx + (Jz - Jx)/r``."""
        jx = self._jx() if jx is None else jx
        z = np.asarray(z, dtype=float)
        return (self.f.representative(z) + self.B(self.x)
                + (_duality(z, self.space.p) - jx) / self.r)


# ---------------------------------------------------------------------------
# verification


_SAMPLE_CACHE: dict = {}


def verification_sample(C: ConvexSet, count: int = 200, seed: int = 12345) -> np.ndarray:
    """Extreme points (for boxes) plus sampled points of ``C``; cached per set."""
    key = (id(C), count, seed)
    hit = _SAMPLE_CACHE.get(key)
    if hit is not None and hit[0] is C:
        return hit[1]
    rng = np.random.default_rng(seed)
    pts = list(C.extreme_points() or [])
    pts += sample_points(C, rng, count)
    Y = np.array(pts, dtype=float)
    if len(_SAMPLE_CACHE) > 256:
        _SAMPLE_CACHE.clear()
    _SAMPLE_CACHE[key] = (C, Y)
    return Y


def resolvent_margin(prob: ResolventProblem, z, Y: Optional[np.ndarray] = None) -> float:
    """Smallest value of the defining expression over the sample ``Y``."""
    if Y is None:
        Y = verification_sample(prob.C)
    z = np.asarray(z, dtype=float)
    lin = prob.B(prob.x) + (_duality(z, prob.space.p) - prob._jx()) / prob.r
    vals = prob.f(z, Y) + (Y - z) @ lin
    return float(np.min(vals))


# ---------------------------------------------------------------------------
# solvers


def _vi_jacobian(prob: ResolventProblem, z: np.ndarray) -> np.ndarray:
    Q = prob.f.representative.Q
    if prob.space.is_hilbert:
        return Q + np.eye(z.size) / prob.r
    p = prob.space.p
    nz = _pnorm(z, p)
    # keep the Jacobian finite at zero coordinates when p < 2
    floor = 1e-8 * max(nz, 1e-300)
    zz = np.where(np.abs(z) < floor, np.where(z < 0, -floor, floor), z)
    return Q + duality_map_jacobian(p, zz) / prob.r


def _kkt_newton(prob, jx, z, A, b, tol, max_iters=60):
    """Solve ``M(z) + A^T lam = 0, A z = b`` by damped Newton.

    For ``p < 2`` the unknown is ``v = Jz`` with ``z = J_q(v)``: ``J`` has
    an infinite slope at zero coordinates, where Newton in ``z`` only
    bisects, while ``J_q`` is continuously differentiable (``q > 2``).
    """
    n = z.size
    k = A.shape[0]
    p = prob.space.p
    dual = p < 2.0
    q = prob.space.q
    lam = np.zeros(k)
    if k:
        # multiplier estimate at the starting point
        lam = np.linalg.lstsq(A.T, -prob.vi_map(z, jx), rcond=None)[0]
    w = _duality(z, p) if dual else z

    def primal(w):
        return _duality(w, q) if dual else w

    def resid(w, lam):
        z = primal(w)
        return np.concatenate([prob.vi_map(z, jx) + A.T @ lam, A @ z - b])

    F = resid(w, lam)
    nF = np.linalg.norm(F)
    for _ in range(max_iters):
        if nF <= tol:
            return primal(w), lam
        K = np.zeros((n + k, n + k))
        if dual:
            Dz = duality_map_jacobian(q, w) if np.any(w) else np.zeros((n, n))
            K[:n, :n] = prob.f.representative.Q @ Dz + np.eye(n) / prob.r
            K[n:, :n] = A @ Dz
        else:
            K[:n, :n] = _vi_jacobian(prob, w)
            K[n:, :n] = A
        K[:n, n:] = A.T
        try:
            d = np.linalg.solve(K, -F)
        except np.linalg.LinAlgError:
            d = np.linalg.lstsq(K, -F, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            wt, lt = w + t * d[:n], lam + t * d[n:]
            Ft = resid(wt, lt)
            nt = np.linalg.norm(Ft)
            if nt < (1.0 - 1e-4 * t) * nF:
                break
            t *= 0.5
        else:
            return None
        w, lam, F, nF = wt, lt, Ft, nt
    return (primal(w), lam) if nF <= tol else None


def _active_set(prob, jx, lin, z, working, tol, max_rounds=None):
    """Active-set loop over ``G z <= h, E z = e`` with Newton subproblems."""
    G, h, E, e = lin
    mi = G.shape[0]
    W = [i for i in working if 0 <= i < mi]
    max_rounds = max_rounds or 4 * (mi + 5)
    kkt_tol = tol * max(1.0, np.linalg.norm(jx))
    for _ in range(max_rounds):
        A = np.vstack([E, G[W]]) if W else E
        b = np.concatenate([e, h[W]]) if W else e
        out = _kkt_newton(prob, jx, z, A, b, kkt_tol)
        if out is None:
            return None
        zc, lam = out
        mu = lam[E.shape[0]:]
        if mu.size and mu.min() < -tol:
            W.pop(int(np.argmin(mu)))
            continue
        viol = G @ zc - h if mi else np.zeros(0)
        if viol.size and viol.max() > tol:
            cand = [i for i in np.argsort(-viol) if viol[i] > tol and i not in W]
            if not cand:
                return None
            W.append(int(cand[0]))
            # a feasible restart keeps Newton well inside its basin
            z = metric_project(prob.C, zc) if not prob.space.is_hilbert else zc
            continue
        return zc, tuple(W)
    return None


def _ball_newton(prob, jx, z, ball: Ball, tol, max_iters=80):
    """Solve the VI over a Euclidean ball through its one-multiplier KKT system."""
    n = z.size
    E = np.zeros((0, n))
    kkt_tol = tol * max(1.0, np.linalg.norm(jx))
    out = _kkt_newton(prob, jx, z, E, np.zeros(0), kkt_tol)
    if out is not None and np.linalg.norm(out[0] - ball.center) <= ball.radius:
        return out[0]
    z = ball.project(out[0] if out is not None else z)
    d = z - ball.center
    mu = max(0.0, -float(d @ prob.vi_map(z, jx)) / max(d @ d, 1e-300))

    def resid(z, mu):
        d = z - ball.center
        return np.concatenate([prob.vi_map(z, jx) + mu * d, [0.5 * (d @ d - ball.radius ** 2)]])

    F = resid(z, mu)
    nF = np.linalg.norm(F)
    for _ in range(max_iters):
        if nF <= kkt_tol:
            break
        d = z - ball.center
        K = np.zeros((n + 1, n + 1))
        K[:n, :n] = _vi_jacobian(prob, z) + mu * np.eye(n)
        K[:n, n] = d
        K[n, :n] = d
        try:
            step = np.linalg.solve(K, -F)
        except np.linalg.LinAlgError:
            return None
        t = 1.0
        while t > 1e-10:
            zt, mt = z + t * step[:n], mu + t * step[n]
            Ft = resid(zt, mt)
            nt = np.linalg.norm(Ft)
            if nt < (1.0 - 1e-4 * t) * nF:
                break
            t *= 0.5
        else:
            return None
        z, mu, F, nF = zt, mt, Ft, nt
    if nF > kkt_tol or mu < -tol:
        return None
    return ball.project(z)


def _natural_residual(prob, jx, z) -> float:
    return float(np.linalg.norm(z - metric_project(prob.C, z - prob.vi_map(z, jx))))


def _projection_iteration(prob, jx, z, tol, max_iters):
    """Fixed point of ``z -> P_C(z - s M(z))`` with step halving, then
    extragradient with a backtracked step once halving has failed 3 times."""
    C = prob.C
    Qn = np.linalg.norm(prob.f.representative.Q, 2)
    s = prob.r / (1.0 + prob.r * Qn)
    z = metric_project(C, z)
    failures = 0
    prev = np.inf
    it = 0
    while it < max_iters and failures < 3:
        it += 1
        zn = metric_project(C, z - s * prob.vi_map(z, jx))
        step = np.linalg.norm(zn - z)
        if step > prev * (1.0 + 1e-12) and step > 1e-14:
            s *= 0.5
            failures += 1
            prev = np.inf
            continue
        z, prev = zn, step
        if step <= tol * s and _natural_residual(prob, jx, z) <= tol:
            return z
    # extragradient
    while it < max_iters:
        it += 1
        Mz = prob.vi_map(z, jx)
        while True:
            zb = metric_project(C, z - s * Mz)
            Mb = prob.vi_map(zb, jx)
            if s * np.linalg.norm(Mb - Mz) <= 0.9 * np.linalg.norm(zb - z) + 1e-300:
                break
            s *= 0.5
            if s < 1e-14:
                raise ResolventError("extragradient step collapsed; r is too large "
                                     "relative to the conditioning of the problem")
        z = metric_project(C, z - s * Mb)
        if np.linalg.norm(zb - z) <= tol * s and _natural_residual(prob, jx, z) <= tol:
            return z
        s *= 1.2
    raise ResolventError(f"resolvent iteration cap of {max_iters} exceeded")


@dataclass
class _WarmStart:
    working: tuple = ()
    z: Optional[np.ndarray] = None


def solve_resolvent(prob: ResolventProblem, tol: float = 1e-10, max_iters: int = 20000,
                    z0=None, certify: bool = True, cert_tol: float = 1e-7,
                    warm: Optional[_WarmStart] = None) -> np.ndarray:
    """Return the resolvent point ``T_r x`` of ``prob``.

    Parameters
    ----------
    tol : float
        KKT / natural-residual tolerance of the inner solver.
    z0 : array, optional
        Starting point; the anchor ``x`` is used by default.
    certify : bool
        Check the defining inequality on the verification sample of ``C``
        and raise :class:`ResolventError` if it is violated by more than
        ``cert_tol``.
    warm : _WarmStart, optional
        Mutable warm-start record (active set) reused across calls.
    """
    space = prob.space
    jx = prob._jx()
    z = np.array(prob.x if z0 is None else z0, dtype=float)
    lin = prob.C.linear_constraints()
    result = None
    if lin is not None:
        G, h, E, e = lin
        if G.shape[0] == 0 and E.shape[0] == 0 and space.is_hilbert:
            K = _vi_jacobian(prob, z)
            rhs = -(prob.f.representative.q + prob.B(prob.x) - jx / prob.r)
            result = np.linalg.solve(K, rhs)
        else:
            start = list(warm.working) if warm is not None else []
            if not start and G.shape[0]:
                # guess the active set from one projected step
                zp = metric_project(prob.C, z - prob.r * prob.vi_map(z, jx))
                start = [int(i) for i in np.flatnonzero(G @ zp - h > -1e-12)]
            out = _active_set(prob, jx, lin, z, start, tol)
            if out is None and start:
                out = _active_set(prob, jx, lin, z, [], tol)
            if out is not None:
                result, W = out
                if warm is not None:
                    warm.working = W
    elif isinstance(prob.C, Ball):
        result = _ball_newton(prob, jx, z, prob.C, tol)
    if result is None:
        result = _projection_iteration(prob, jx, z, tol, max_iters)
    if isinstance(prob.C, Box):
        result = np.clip(result, prob.C.lower, prob.C.upper)
    if certify:
        m = resolvent_margin(prob, result)
        if m < -cert_tol:
            raise ResolventError(f"defining inequality violated on the verification "
                                 f"sample (margin {m:.3e})")
    return result


# ---------------------------------------------------------------------------
# property checks


def _anchors(prob: ResolventProblem, rng, count, radius=3.0):
    centre = prob.C.anchor()
    return [centre + radius * rng.standard_normal(prob.space.dim) for _ in range(count)]


def check_firm_nonexpansiveness(prob_template: ResolventProblem, pairs: int = 100,
                                seed: int = 0, tol: float = 1e-6) -> CheckReport:
    """Sample ``<Tx - Ty, JTx - JTy> - <Tx - Ty, Jx - Jy>`` (should be ``<= 0``).

    The first pair is ``x = y``.  ``worst_margin`` is the largest sample.
    """
    rng = np.random.default_rng(seed)
    p = prob_template.space.p
    xs = _anchors(prob_template, rng, 2 * pairs)
    xs[1] = xs[0]
    worst = -np.inf
    bad = 0
    for k in range(pairs):
        x, y = xs[2 * k], xs[2 * k + 1]
        tx = solve_resolvent(prob_template.with_anchor(x))
        ty = solve_resolvent(prob_template.with_anchor(y))
        d = tx - ty
        m = d @ (_duality(tx, p) - _duality(ty, p)) - d @ (_duality(x, p) - _duality(y, p))
        worst = max(worst, m)
        bad += m > tol
    return CheckReport(pairs, int(bad), float(worst), tol,
                       "random anchor pairs; defining inequality certified on a sample of C")


def check_resolvent_phi_inequality(prob_template: ResolventProblem, q_in_solution_set,
                                   samples: int = 100, seed: int = 0,
                                   tol: float = 1e-6) -> CheckReport:
    """Sample ``phi(q, T x) + phi(T x, x) - phi(q, x)`` (should be ``<= 0``)."""
    space = prob_template.space
    q = np.asarray(q_in_solution_set, dtype=float)
    rng = np.random.default_rng(seed)
    xs = _anchors(prob_template, rng, samples)
    xs[0] = q.copy()
    worst = -np.inf
    bad = 0
    for x in xs:
        tx = solve_resolvent(prob_template.with_anchor(x))
        m = (lyapunov_phi(space, q, tx) + lyapunov_phi(space, tx, x)
             - lyapunov_phi(space, q, x))
        worst = max(worst, m)
        bad += m > tol
    return CheckReport(samples, int(bad), float(worst), tol,
                       "random anchors plus the solution point itself")
