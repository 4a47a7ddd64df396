"""Finite-dimensional p-norm geometry.

Norms, duality mappings, sampled moduli of convexity and smoothness, and
checks of the weak parallelogram inequalities.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .certificate import Certificate, fails, holds, lexicographic_first


@dataclass(frozen=True)
class PNormSpace:
    """R^n with the p-norm, ``1 < p < inf``."""

    dim: int
    p: float

    def __post_init__(self) -> None:
        p = float(self.p)
        if not (1.0 < p < np.inf):
            raise ValueError(f"p must lie in (1, inf), got {self.p}")
        if int(self.dim) < 1:
            raise ValueError("dim must be positive")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def is_hilbert(self) -> bool:
        return self.p == 2.0

    def dual(self) -> PNormSpace:
        return PNormSpace(self.dim, self.q)

    def norm(self, x) -> np.ndarray | float:
        return norm(self, x)

    def duality_map(self, x) -> np.ndarray:
        return duality_map(self, x)

    def to_json(self) -> dict:
        return {"dim": self.dim, "p": self.p, "q": self.q}


def _pnorm(x: np.ndarray, p: float) -> np.ndarray:
    if p == 2.0:
        return np.sqrt(np.sum(x * x, axis=-1))
    a = np.abs(x)
    m = a.max(axis=-1, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    # scale by the max entry to avoid overflow in |x|^p
    return m[..., 0] * np.sum((a / safe) ** p, axis=-1) ** (1.0 / p)


def norm(space: PNormSpace, x) -> np.ndarray | float:
    """p-norm of a vector, or of each row of a 2D array."""
    arr = np.asarray(x, dtype=float)
    out = _pnorm(np.atleast_1d(arr), space.p)
    return float(out) if arr.ndim <= 1 else out


def norm_sq(space: PNormSpace, x) -> np.ndarray:
    """Squared p-norm along the last axis, elementwise in every other axis."""
    x = np.asarray(x, dtype=float)
    if space.p == 2.0:
        return np.sum(x * x, axis=-1)
    return _pnorm(x, space.p) ** 2


def _duality(x: np.ndarray, p: float) -> np.ndarray:
    if p == 2.0:
        return x.copy()
    nx = _pnorm(x, p)[..., None]
    a = np.abs(x)
    safe = np.where(nx > 0, nx, 1.0)
    # ||x||^(2-p) |x_i|^(p-1) = ||x|| (|x_i| / ||x||)^(p-1)
    return np.where(nx > 0, nx * (a / safe) ** (p - 1.0) * np.sign(x), 0.0)


def duality_map(space: PNormSpace, x) -> np.ndarray:
    """Gradient of ``||x||_p^2 / 2``, returned in dual (q-norm) coordinates."""
    arr = np.asarray(x, dtype=float)
    out = _duality(np.atleast_1d(arr), space.p)
    return out if arr.ndim else out[0]


def duality_map_inverse(space: PNormSpace, xstar) -> np.ndarray:
    """Inverse of :func:`duality_map`: the duality map of the q-norm."""
    arr = np.asarray(xstar, dtype=float)
    out = _duality(np.atleast_1d(arr), space.q)
    return out if arr.ndim else out[0]


@dataclass(frozen=True)
class GeometryReport:
    p: float
    sampled_modulus_convexity: list[tuple[float, float]] = field(default_factory=list)
    sampled_modulus_smoothness: list[tuple[float, float]] = field(default_factory=list)
    lwp_constant: float | None = None
    uwp_constant: float | None = None

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "sampled_modulus_convexity": [list(r) for r in self.sampled_modulus_convexity],
            "sampled_modulus_smoothness": [list(r) for r in self.sampled_modulus_smoothness],
            "lwp_constant": self.lwp_constant,
            "uwp_constant": self.uwp_constant,
        }


def _unit(space: PNormSpace, v: np.ndarray) -> np.ndarray:
    return v / _pnorm(v, space.p)[:, None]


def _pairs_at_distance(space, x, z, t, iters=80):
    """Unit vectors ``y`` on the arc from ``x`` towards ``-x`` with ``||x - y|| = t``.

    ``y(theta) = unit(cos(theta) x + sin(theta) z)`` runs from ``x`` to ``-x``,
    so bisection in ``theta`` reaches every distance in ``[0, 2]``.
    """
    lo = np.zeros(len(x))
    hi = np.full(len(x), np.pi)

    def arc(theta):
        return _unit(space, np.cos(theta)[:, None] * x + np.sin(theta)[:, None] * z)

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        d = _pnorm(x - arc(mid), space.p)
        below = d < t
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    y = arc(hi)
    if t >= 2.0:
        y = -x
    return y


def estimate_moduli(
    space: PNormSpace,
    samples: int = 400,
    t_values=None,
    s_values=None,
    seed: int = 0,
    distance_tol: float = 1e-3,
) -> GeometryReport:
    """Sampled moduli of convexity and smoothness.

    The convexity modulus at ``t`` is the smallest ``1 - ||x + y|| / 2`` seen
    over unit pairs at distance ``t`` (an upper bound for the infimum).  The
    smoothness modulus at ``s`` is the largest ``(||x + s y|| + ||x - s y||)/2 - 1``
    seen over unit pairs (a lower bound for the supremum).
    """
    if samples < 100:
        raise ValueError("samples must be at least 100")
    if space.dim < 2:
        raise ValueError("moduli are only informative for dim >= 2")
    rng = np.random.default_rng(seed)
    t_values = np.linspace(0.0, 2.0, 21) if t_values is None else np.asarray(t_values, float)
    s_values = np.linspace(0.0, 1.0, 11) if s_values is None else np.asarray(s_values, float)

    x = _unit(space, rng.standard_normal((samples, space.dim)))
    z = rng.standard_normal((samples, space.dim))
    conv = []
    for t in t_values:
        y = _pairs_at_distance(space, x, z, float(t))
        ok = np.abs(_pnorm(x - y, space.p) - t) <= distance_tol
        if ok.any():
            vals = 1.0 - _pnorm(x[ok] + y[ok], space.p) / 2.0
            conv.append((float(t), float(max(vals.min(), 0.0))))

    w = _unit(space, rng.standard_normal((samples, space.dim)))
    smooth = []
    for s in s_values:
        vals = 0.5 * (_pnorm(x + s * w, space.p) + _pnorm(x - s * w, space.p)) - 1.0
        smooth.append((float(s), float(max(vals.max(), 0.0))))

    xs, ys = _parallelogram_pairs(space, samples, rng)
    ratio = _parallelogram_ratios(space, xs, ys)
    return GeometryReport(
        p=space.p,
        sampled_modulus_convexity=conv,
        sampled_modulus_smoothness=smooth,
        lwp_constant=float(ratio.min()),
        uwp_constant=float(ratio.max()),
    )


def _sign_patterns(dim: int) -> np.ndarray:
    return np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=dim)))


def _parallelogram_pairs(space, trials, rng):
    xs = [rng.uniform(-2.0, 2.0, (trials, space.dim))]
    ys = [rng.uniform(-2.0, 2.0, (trials, space.dim))]
    if space.dim <= 3:
        pat = _sign_patterns(space.dim)
        i, j = np.meshgrid(np.arange(len(pat)), np.arange(len(pat)), indexing="ij")
        xs.insert(0, pat[i.ravel()])
        ys.insert(0, pat[j.ravel()])
    return np.concatenate(xs), np.concatenate(ys)


def _parallelogram_ratios(space, xs, ys):
    """``(2(|x|^2 + |y|^2) - |x + y|^2) / |x - y|^2`` over pairs with ``x != y``."""
    d = norm_sq(space, xs - ys)
    keep = d > 1e-12
    num = 2.0 * (norm_sq(space, xs) + norm_sq(space, ys)) - norm_sq(space, xs + ys)
    return num[keep] / d[keep]


def check_parallelogram_law(
    space: PNormSpace, c: float, lower: bool = True, trials: int = 2000, seed: int = 0
) -> Certificate:
    """Test ``|x+y|^2 + c|x-y|^2 <= 2(|x|^2 + |y|^2)`` (``lower``) or its reverse.

    Pairs are every ordered pair of {-1, 0, 1} sign patterns (dim <= 3) followed
    by ``trials`` uniform pairs from ``[-2, 2]^n``.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    rng = np.random.default_rng(seed)
    xs, ys = _parallelogram_pairs(space, trials, rng)
    lhs = norm_sq(space, xs + ys) + c * norm_sq(space, xs - ys)
    rhs = 2.0 * (norm_sq(space, xs) + norm_sq(space, ys))
    tol = 1e-12 * (1.0 + np.abs(rhs))
    bad = lhs > rhs + tol if lower else lhs < rhs - tol
    name = "lower-weak-parallelogram" if lower else "upper-weak-parallelogram"
    params = {"p": space.p, "dim": space.dim, "c": c, "trials": trials, "seed": seed,
              "pairs": int(len(xs))}
    gap = float(np.max(np.abs(lhs - rhs)))
    if bad.any():
        idx = np.flatnonzero(bad)
        k = idx[lexicographic_first(np.hstack([xs[idx], ys[idx]]))]
        return fails(name, {"kind": "parallelogram", "x": xs[k], "y": ys[k],
                            "lhs": float(lhs[k]), "rhs": float(rhs[k])}, params=params)
    return holds(name, params={**params, "max_abs_gap": gap})


def duality_continuity_modulus(
    space: PNormSpace, deltas=(1e-1, 1e-2, 1e-3, 1e-4), samples: int = 500, seed: int = 0
) -> list[tuple[float, float]]:
    """Empirical ``omega(delta) = max ||J(x+h) - J(x)||_q`` over ``||h||_p <= delta``."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, (samples, space.dim))
    out = []
    for d in deltas:
        h = _unit(space, rng.standard_normal((samples, space.dim))) * d * rng.uniform(0, 1, (samples, 1))
        diff = _duality(x + h, space.p) - _duality(x, space.p)
        out.append((float(d), float(_pnorm(diff, space.q).max())))
    return out
