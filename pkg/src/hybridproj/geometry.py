"""Finite-dimensional Hilbert and l_p geometries on R^n.

Primal vectors and dual vectors are both plain ``numpy`` arrays; the pairing
between them is the ordinary dot product.  The normalized duality map of l_p
is

    J x = ||x||_p^(2-p) * sign(x) * |x|^(p-1)

and its inverse is the duality map of the conjugate space l_q, 1/p + 1/q = 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "ConfigurationError",
    "SpaceSpec",
    "hilbert",
    "lp",
    "norm",
    "dual_norm",
    "duality_map",
    "duality_map_inverse",
    "duality_map_jacobian",
    "lyapunov_phi",
    "v_functional",
    "check_uniform_convexity_constant",
]


class ConfigurationError(ValueError):
    """Raised when a space or problem is configured outside its valid range."""


def _pnorm(x: np.ndarray, p: float) -> float:
    if p == 2.0:
        return float(np.linalg.norm(x))
    ax = np.abs(x)
    m = ax.max() if ax.size else 0.0
    if m == 0.0:
        return 0.0
    # scale first so that |x|^p cannot underflow or overflow
    return float(m * np.sum((ax / m) ** p) ** (1.0 / p))


def _signed_power(x: np.ndarray, e: float) -> np.ndarray:
    # sign(x)|x|^e with 0 -> 0, valid for e > 0
    return np.sign(x) * np.abs(x) ** e


def _norm_sq_diff(x: np.ndarray, w: np.ndarray, p: float) -> float:
    """``||x||_p^2 - ||w||_p^2`` without cancellation when ``x`` is close to ``w``."""
    if p == 2.0:
        # a product of difference and sum is already free of cancellation
        return float((x - w) @ (x + w))
    m = max(np.abs(x).max(initial=0.0), np.abs(w).max(initial=0.0))
    if m == 0.0:
        return 0.0
    # a power-of-two scale is exact, so coordinate differences survive it
    m = 2.0 ** np.frexp(m)[1]
    ax, aw = np.abs(x) / m, np.abs(w) / m
    # |x_i|^p - |w_i|^p = |w_i|^p expm1(p log1p((|x_i| - |w_i|) / |w_i|))
    # only needed where |x_i| and |w_i| are close; elsewhere nothing cancels
    pos = (ax >= 0.5 * aw) & (ax <= 2.0 * aw) & (aw > 0)
    t = ax ** p - aw ** p
    t[pos] = aw[pos] ** p * np.expm1(p * np.log1p((ax[pos] - aw[pos]) / aw[pos]))
    sw = np.sum(aw ** p)
    diff = np.sum(t)
    if sw == 0.0:
        return float(m * m * diff ** (2.0 / p))
    with np.errstate(divide="ignore"):
        return float(m * m * sw ** (2.0 / p) * np.expm1((2.0 / p) * np.log1p(diff / sw)))


def _duality(x: np.ndarray, p: float) -> np.ndarray:
    if p == 2.0:
        return x.copy()
    nx = _pnorm(x, p)
    if nx == 0.0:
        return np.zeros_like(x)
    # J is 1-homogeneous, so evaluate on the unit sphere and rescale
    return nx * _signed_power(x / nx, p - 1.0)


@dataclass(frozen=True)
class SpaceSpec:
    """Geometry of R^n equipped with the Euclidean or an l_p norm.

    Parameters
    ----------
    kind : {"hilbert", "lp"}
    dim : int
        Ambient dimension n.
    p : float
        Exponent for ``kind="lp"``; ignored (and forced to 2) for Hilbert.
    c : float, optional
        2-uniform-convexity constant.  Hilbert uses 1.  For l_p with
        1 < p <= 2 the default is sqrt(p - 1); for p > 2 the space is not
        2-uniformly convex and ``c`` is left as ``None``.
    """

    kind: str
    dim: int
    p: float = 2.0
    c: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("hilbert", "lp"):
            raise ConfigurationError(f"unknown space kind {self.kind!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigurationError("dim must be a positive integer")
        object.__setattr__(self, "dim", int(self.dim))
        if self.kind == "hilbert":
            if self.c is not None and self.c != 1.0:
                raise ConfigurationError("Hilbert space has c = 1")
            object.__setattr__(self, "p", 2.0)
            object.__setattr__(self, "c", 1.0)
            return
        p = float(self.p)
        if not p > 1.0 or not np.isfinite(p):
            raise ConfigurationError("l_p exponent must satisfy p > 1")
        object.__setattr__(self, "p", p)
        if p > 2.0:
            if self.c is not None:
                raise ConfigurationError(
                    "l_p with p > 2 is not 2-uniformly convex; c is undefined")
            return
        c = np.sqrt(p - 1.0) if self.c is None else float(self.c)
        if not 0.0 < c <= 1.0:
            raise ConfigurationError("c must lie in (0, 1]")
        object.__setattr__(self, "c", float(c))
        if check_uniform_convexity_constant(self, samples=300) < -1e-12:
            raise ConfigurationError(
                f"c = {c} violates ||x - y|| <= (2/c^2)||Jx - Jy|| on samples")

    @property
    def q(self) -> float:
        """Conjugate exponent."""
        return self.p / (self.p - 1.0)

    @property
    def is_hilbert(self) -> bool:
        return self.kind == "hilbert" or self.p == 2.0

    @property
    def two_uniformly_convex(self) -> bool:
        return self.c is not None

    def require_two_uniform_convexity(self, what: str = "this operation"):
        if self.c is None:
            raise ConfigurationError(
                f"{what} needs a 2-uniformly convex space; l_p with "
                f"p = {self.p} > 2 is not")

    def check(self, *vectors) -> None:
        for v in vectors:
            v = np.asarray(v)
            if v.shape != (self.dim,):
                raise ValueError(
                    f"dimension mismatch: expected ({self.dim},), got {v.shape}")


def hilbert(dim: int) -> SpaceSpec:
    return SpaceSpec("hilbert", dim)


def lp(p: float, dim: int, c: Optional[float] = None) -> SpaceSpec:
    return SpaceSpec("lp", dim, p=p, c=c)


def _vec(space: SpaceSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    space.check(x)
    return x


def norm(space: SpaceSpec, x) -> float:
    """Primal norm: Euclidean for Hilbert, ``||x||_p`` for l_p."""
    return _pnorm(_vec(space, x), space.p)


def dual_norm(space: SpaceSpec, u) -> float:
    """Dual norm: Euclidean for Hilbert, ``||u||_q`` for l_p."""
    return _pnorm(_vec(space, u), space.q)


def duality_map(space: SpaceSpec, x) -> np.ndarray:
    return _duality(_vec(space, x), space.p)


def duality_map_inverse(space: SpaceSpec, u) -> np.ndarray:
    return _duality(_vec(space, u), space.q)


def duality_map_jacobian(exponent: float, v: np.ndarray) -> np.ndarray:
    """Jacobian of the duality map of l_r (r = ``exponent``) at ``v``.

    This is the Hessian of ``0.5 * ||v||_r^2``.  It exists everywhere for
    r >= 2 (it is 0-homogeneous, so at ``v = 0`` the identity is returned as
    a stand-in) and blows up at zero coordinates for r < 2.
    """
    r = float(exponent)
    n = v.size
    if r == 2.0:
        return np.eye(n)
    nv = _pnorm(v, r)
    if nv == 0.0:
        return np.eye(n)
    s = v / nv
    a = np.abs(s)
    with np.errstate(divide="ignore"):
        d = (r - 1.0) * a ** (r - 2.0)
    w = _signed_power(s, r - 1.0)
    return np.diag(d) + (2.0 - r) * np.outer(w, w)


def lyapunov_phi(space: SpaceSpec, x, y) -> float:
    """``||x||^2 - 2<x, Jy> + ||y||^2``; equals ``||x - y||^2`` in Hilbert space."""
    x = _vec(space, x)
    y = _vec(space, y)
    if space.is_hilbert:
        d = x - y
        return float(d @ d)
    val = _pnorm(x, space.p) ** 2 - 2.0 * float(x @ _duality(y, space.p)) \
        + _pnorm(y, space.p) ** 2
    return max(val, 0.0)


def v_functional(space: SpaceSpec, x, u) -> float:
    """``||x||^2 - 2<x, u> + ||u||_*^2`` for primal ``x`` and dual ``u``."""
    x = _vec(space, x)
    u = _vec(space, u)
    return float(_pnorm(x, space.p) ** 2 - 2.0 * float(x @ u)
                 + _pnorm(u, space.q) ** 2)


def check_uniform_convexity_constant(space: SpaceSpec, samples: int = 2000,
                                     seed: int = 0) -> float:
    """Sample ``(2/c^2)||Jx - Jy|| - ||x - y||`` and return its minimum.

    A negative return value means the configured ``c`` is too large for the
    inequality ``||x - y|| <= (2/c^2)||Jx - Jy||``.
    """
    space.require_two_uniform_convexity("the uniform-convexity check")
    rng = np.random.default_rng(seed)
    k = 2.0 / space.c ** 2
    worst = np.inf
    for _ in range(samples):
        scale = 10.0 ** rng.uniform(-3, 3)
        x = rng.standard_normal(space.dim) * scale
        y = x + rng.standard_normal(space.dim) * scale * 10.0 ** rng.uniform(-4, 0)
        if rng.random() < 0.3:
            # sparse vectors exercise the non-smooth corners of J
            x[rng.random(space.dim) < 0.5] = 0.0
        lhs = _pnorm(x - y, space.p)
        rhs = k * _pnorm(_duality(x, space.p) - _duality(y, space.p), space.q)
        worst = min(worst, (rhs - lhs) / max(1.0, lhs))
    return float(worst)
