"""Moreau envelopes, proximal mappings and the checks built on them.

Envelopes are computed in two phases: a full grid scan of the search box,
then coordinate-wise ternary refinement from every near-optimal grid-local
minimum.  Divergence to ``-inf`` is detected heuristically by doubling the
search box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .banach import PNormSpace, duality_map, norm, norm_sq
from .certificate import Certificate, Verdict, fails, holds, inconclusive, lexicographic_first
from .core import (
    Box, ExtReal, LambdaNonPositive, NonFiniteValue, TestFunction, VarConvexError,
    as_points, grid_points,
)

MAX_DOUBLINGS = 6
DIVERGENCE_FACTOR = 10.0
SEED_REL_TOL = 1e-7
MAX_SEEDS = 32
KEEP_REL_TOL = 1e-8
DEDUP_DIST = 1e-5
BRACKET_WIDTH = 1e-10
SCAN_CHUNK = 4_000_000


class Unbounded:
    """The infimum is (heuristically) ``-inf``.  Not an :class:`ExtReal`."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Unbounded"

    def to_json(self) -> str:
        return "unbounded"


UNBOUNDED = Unbounded()


class ProxBoundInconsistency(VarConvexError, RuntimeError):
    """Finite envelopes at some ``lambda`` but divergence at a smaller one."""


@dataclass(frozen=True)
class EnvelopeResult:
    value: ExtReal | Unbounded
    minimizers: tuple[np.ndarray, ...]
    lam: float
    tilt: np.ndarray
    x: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def unbounded(self) -> bool:
        return self.value is UNBOUNDED

    @property
    def finite(self) -> bool:
        return not self.unbounded and self.value.is_finite

    def as_float(self) -> float:
        if self.unbounded:
            raise ValueError("envelope is unbounded below")
        return self.value.value

    @property
    def single_valued(self) -> bool:
        return len(self.minimizers) == 1

    def to_json(self) -> dict:
        return {
            "x": self.x.tolist(), "lambda": self.lam, "tilt": self.tilt.tolist(),
            "value": "unbounded" if self.unbounded else self.value.value,
            "minimizers": [m.tolist() for m in self.minimizers],
            "diagnostics": self.diagnostics,
        }


def default_ppa(dim: int) -> int:
    return {1: 2001, 2: 201}.get(dim, 41)


def default_search_box(f: TestFunction, points, margin: float = 1.0, points_per_axis=None) -> Box:
    """Smallest box holding the function's bounding box and ``points +/- margin``."""
    pts = as_points(points, f.dim)
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    if f.bounding_box is not None:
        lo = np.minimum(lo, f.bounding_box.lo)
        hi = np.maximum(hi, f.bounding_box.hi)
    return Box(lo, hi, points_per_axis or default_ppa(f.dim))


def _doubled(box: Box, j: int) -> Box:
    c = np.array(box.center) if box.center else 0.5 * (np.array(box.lo) + np.array(box.hi))
    half = 0.5 * (np.array(box.hi) - np.array(box.lo)) * 2.0**j
    return Box(c - half, c + half, box.points_per_axis, center=c)


class _Objective:
    """``w -> f(w) - <tilt, w> + |w - x|^2 / (2 lam)`` with optional box domain."""

    def __init__(self, f, space, lam, tilt, domain: Box | None):
        self.f, self.space, self.lam = f, space, float(lam)
        self.tilt = tilt
        self.domain = domain

    def base(self, W: np.ndarray) -> np.ndarray:
        v = self.f.values(W) - np.sum(W * self.tilt, axis=-1)
        if self.domain is not None:
            lo, hi = np.array(self.domain.lo), np.array(self.domain.hi)
            v = np.where(np.all((W >= lo) & (W <= hi), axis=-1), v, np.inf)
        return v

    def at(self, W: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Objective for paired rows ``W[i]`` and ``X[i]``."""
        return self.base(W) + norm_sq(self.space, W - X) / (2.0 * self.lam)

    def scan(self, grid: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Objective on the whole grid for every ``x``: shape ``(len(X), len(grid))``."""
        b = self.base(grid)
        out = np.empty((len(X), len(grid)))
        step = max(1, SCAN_CHUNK // max(1, len(grid) * grid.shape[1]))
        for s in range(0, len(X), step):
            diff = grid[None, :, :] - X[s:s + step, None, :]
            out[s:s + step] = b[None, :] + norm_sq(self.space, diff) / (2.0 * self.lam)
        return out


def _local_minima(vals: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Mask of grid points no larger than any axis neighbour."""
    g = vals.reshape(shape)
    mask = np.ones(shape, dtype=bool)
    for ax in range(len(shape)):
        pad = [(0, 0)] * len(shape)
        pad[ax] = (1, 1)
        p = np.pad(g, pad, constant_values=np.inf)
        sl_prev = [slice(None)] * len(shape)
        sl_next = [slice(None)] * len(shape)
        sl_prev[ax] = slice(0, -2)
        sl_next[ax] = slice(2, None)
        mask &= (g <= p[tuple(sl_prev)]) & (g <= p[tuple(sl_next)])
    return mask.ravel()


def _on_boundary(idx: int, shape: tuple[int, ...]) -> bool:
    sub = np.unravel_index(idx, shape)
    return any(i == 0 or i == s - 1 for i, s in zip(sub, shape))


def _ternary_refine(obj: _Objective, seeds: np.ndarray, X: np.ndarray, half: np.ndarray,
                    max_sweeps: int = 60) -> np.ndarray:
    """Coordinate-wise ternary search, vectorized over seeds."""
    w = seeds.copy()
    gw = obj.at(w, X)
    n = w.shape[1]
    half = half.copy()
    for _ in range(1 if n == 1 else max_sweeps):
        w_prev = w.copy()
        for i in range(n):
            a = w[:, i] - half[:, i]
            b = w[:, i] + half[:, i]
            width = float(np.max(b - a))
            iters = max(0, math.ceil(math.log(max(width, BRACKET_WIDTH) / BRACKET_WIDTH) / math.log(1.5)))
            for _ in range(iters):
                m1 = a + (b - a) / 3.0
                m2 = b - (b - a) / 3.0
                w1 = w.copy()
                w1[:, i] = m1
                w2 = w.copy()
                w2[:, i] = m2
                g1, g2 = obj.at(w1, X), obj.at(w2, X)
                left = g1 < g2
                right = g1 > g2
                a = np.where(left, a, m1)
                b = np.where(right, b, m2)
            cand = w.copy()
            cand[:, i] = 0.5 * (a + b)
            gc = obj.at(cand, X)
            better = gc < gw
            w[better] = cand[better]
            gw = np.where(better, gc, gw)
        delta = np.abs(w - w_prev).max(axis=1)
        if n == 1 or float(delta.max()) < 1e-12:
            break
        half = np.repeat(np.maximum(4.0 * delta, 1e-9)[:, None], n, axis=1)
    return w


def envelope_batch(
    f: TestFunction,
    space: PNormSpace,
    lam: float,
    X,
    tilt=None,
    search: Box | None = None,
    localize: bool = False,
) -> list[EnvelopeResult]:
    """Tilted Moreau envelope and prox at every row of ``X``.

    ``localize=True`` treats ``search`` as the domain (``f`` plus the box
    indicator) and skips the divergence test.
    """
    if not lam > 0:
        raise LambdaNonPositive(f"lambda must be positive, got {lam}")
    X = as_points(X, f.dim)
    tilt = np.zeros(f.dim) if tilt is None else np.atleast_1d(np.asarray(tilt, dtype=float))
    search = search or default_search_box(f, X)
    for x in X:
        if not localize and not search.contains(x):
            raise ValueError(f"search box does not contain x = {x.tolist()}")
    obj = _Objective(f, space, lam, tilt, search if localize else None)
    shape = (search.points_per_axis,) * f.dim

    rounds = 0 if localize else MAX_DOUBLINGS
    boxes = [_doubled(search, j) for j in range(rounds + 1)]
    grids = [grid_points(b) for b in boxes]
    scans = [obj.scan(grids[0], X)]
    for g in grids[1:]:
        scans.append(obj.scan(g, X))

    results: list[EnvelopeResult | None] = [None] * len(X)
    seeds, owners, halves = [], [], []
    chosen = []
    for i, x in enumerate(X):
        bests = [float(s[i].min()) for s in scans]
        argmins = [int(np.argmin(s[i])) for s in scans]
        m0 = bests[0]
        diag = {"search_box": search.to_json(), "localized": localize, "doublings": rounds,
                "box_minima": bests, "divergence_test": "not run" if localize else "passed"}
        if not np.isfinite(m0) and all(not np.isfinite(b) for b in bests):
            raise NonFiniteValue(f"objective is +inf on the whole search box at x = {x.tolist()}")
        if not localize:
            last_boundary = _on_boundary(argmins[-1], shape)
            drop = m0 - bests[-1]
            if last_boundary and drop >= DIVERGENCE_FACTOR * (1.0 + abs(m0)):
                diag["divergence_test"] = "unbounded"
                results[i] = EnvelopeResult(UNBOUNDED, (), float(lam), tilt, x, diag)
                continue
        best_all = min(bests)
        j = next(j for j in range(len(bests))
                 if bests[j] <= best_all + 1e-6 * (1.0 + abs(best_all)))
        diag["box_used"] = j
        row = scans[j][i]
        best = float(row.min())
        near = row <= best + SEED_REL_TOL * (1.0 + abs(best))
        cand = np.flatnonzero(near & _local_minima(row, shape))
        if len(cand) == 0:
            cand = np.array([int(np.argmin(row))])
        cand = cand[np.lexsort((cand, row[cand]))][:MAX_SEEDS]
        h = boxes[j].spacing
        for c in cand:
            seeds.append(grids[j][c])
            owners.append(i)
            halves.append(h)
        chosen.append((i, j))

    if seeds:
        S = np.array(seeds)
        O = np.array(owners)
        R = _ternary_refine(obj, S, X[O], np.array(halves))
        gS = obj.at(S, X[O])
        gR = obj.at(R, X[O])
        W = np.where((gR <= gS)[:, None], R, S)
        gW = np.minimum(gR, gS)
        for i, j in chosen:
            mine = np.flatnonzero(O == i)
            vals = gW[mine]
            v = float(vals.min())
            keep = mine[vals <= v + KEEP_REL_TOL * (1.0 + abs(v))]
            keep = keep[np.lexsort((W[keep].T[::-1].tolist() + [gW[keep]]))] if len(keep) > 1 else keep
            mins: list[np.ndarray] = []
            for k in keep:
                if all(np.linalg.norm(W[k] - m) > DEDUP_DIST for m in mins):
                    mins.append(W[k].copy())
            value = min(float(obj.at(m[None, :], X[i][None, :])[0]) for m in mins)
            diag = {"search_box": search.to_json(), "localized": localize,
                    "divergence_test": "not run" if localize else "passed",
                    "box_used": j, "grid_spacing": float(boxes[j].spacing.max()),
                    "seeds": int(len(mine))}
            mins.sort(key=lambda m: tuple(m))
            results[i] = EnvelopeResult(ExtReal(value), tuple(mins), float(lam), tilt, X[i], diag)
    return results  # type: ignore[return-value]


def envelope(f, space, lam, x, tilt=None, search=None, localize=False) -> EnvelopeResult:
    """Tilted Moreau envelope ``inf_w f(w) - <tilt, w> + |w - x|^2 / (2 lam)``."""
    return envelope_batch(f, space, lam, np.atleast_1d(np.asarray(x, float))[None, :],
                          tilt, search, localize)[0]


def prox(f, space, lam, x, tilt=None, search=None, localize=False) -> list[np.ndarray]:
    return list(envelope(f, space, lam, x, tilt, search, localize).minimizers)


def _sets_close(a: Sequence[np.ndarray], b: Sequence[np.ndarray], tol: float) -> bool:
    if len(a) != len(b):
        return False
    return all(min(np.linalg.norm(p - q) for q in b) <= tol for p in a) and \
        all(min(np.linalg.norm(p - q) for q in a) <= tol for p in b)


def tilt_relation_check(f, lam, xbar, xstar, search=None, localize=False,
                        tol: float = 1e-8) -> Certificate:
    """Check the Hilbert-space tilt identity for envelope values and prox sets.

    ``e^{x*}(xbar) = e(xbar + lam x*) - <x*, xbar> - (lam/2)|x*|^2`` and
    ``P^{x*}(xbar) = P(xbar + lam x*)``.
    """
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    xstar = np.atleast_1d(np.asarray(xstar, dtype=float))
    space = PNormSpace(f.dim, 2.0)
    shifted = xbar + lam * xstar
    search = search or default_search_box(f, np.vstack([xbar, shifted]))
    left = envelope(f, space, lam, xbar, xstar, search, localize)
    right = envelope(f, space, lam, shifted, None, search, localize)
    params = {"lambda": lam, "xbar": xbar, "xstar": xstar, "tol": tol, "localized": localize}
    if left.unbounded or right.unbounded:
        return inconclusive("tilt-relation", "an envelope is unbounded below",
                            params={**params, "left_unbounded": left.unbounded,
                                    "right_unbounded": right.unbounded})
    lv = left.as_float()
    rv = right.as_float() - float(np.dot(xstar, xbar)) - 0.5 * lam * float(np.dot(xstar, xstar))
    h = float(search.spacing.max())
    params.update(left=lv, right=rv, gap=abs(lv - rv))
    if abs(lv - rv) > tol * (1.0 + abs(lv)):
        return fails("tilt-relation", {"kind": "tilt_value", "left": lv, "right": rv}, params=params)
    if not _sets_close(left.minimizers, right.minimizers, h):
        return fails("tilt-relation", {"kind": "tilt_prox",
                                       "left": [m.tolist() for m in left.minimizers],
                                       "right": [m.tolist() for m in right.minimizers]},
                     params=params)
    return holds("tilt-relation", params=params)


@dataclass(frozen=True)
class ProxBoundReport:
    lambda_zero_lower: float
    lambda_zero_upper: float
    witnesses: dict

    @property
    def prox_bounded(self) -> bool:
        return self.lambda_zero_lower > 0

    def to_json(self) -> dict:
        return {"lambda_zero_lower": self.lambda_zero_lower,
                "lambda_zero_upper": self.lambda_zero_upper,
                "witnesses": self.witnesses}


def default_probes(dim: int) -> np.ndarray:
    eye = np.eye(dim)
    return np.vstack([np.zeros((1, dim)), eye, -eye])


def prox_bound_threshold(f, space, lambda_grid, probes=None, search=None) -> ProxBoundReport:
    """Bracket the prox-boundedness threshold on a ladder of ``lambda`` values.

    Finiteness at one probe must imply finiteness at every probe for all
    smaller ``lambda``; a violation means the divergence heuristic misfired
    and raises :class:`ProxBoundInconsistency`.
    """
    lams = [float(v) for v in lambda_grid]
    if any(b <= a for a, b in zip(lams, lams[1:])):
        raise ValueError("lambda_grid must be strictly increasing")
    probes = default_probes(f.dim) if probes is None else as_points(probes, f.dim)
    search = search or default_search_box(f, probes)
    finite = []
    witnesses = {}
    for lam in lams:
        res = envelope_batch(f, space, lam, probes, None, search)
        finite.append([not r.unbounded for r in res])
        witnesses[repr(lam)] = [
            {"x": r.x.tolist(), "value": "unbounded" if r.unbounded else r.as_float()} for r in res
        ]
    for i, row in enumerate(finite):
        if any(row) and not all(all(r) for r in finite[:i]):
            raise ProxBoundInconsistency(f"finite envelope at lambda={lams[i]} after divergence at a smaller lambda")
    lower = max((lam for lam, row in zip(lams, finite) if all(row)), default=0.0)
    upper = min((lam for lam, row in zip(lams, finite) if not all(row)), default=math.inf)
    return ProxBoundReport(lower, upper, witnesses)


def proximal_subgradient_check(f, xbar, xstar, r: float, radius: float,
                               grid: Box | None = None) -> Certificate:
    """Quadratic minorization ``f(x) >= f(xbar) + <x*, x - xbar> - (r/2)|x - xbar|^2`` on a ball."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    xstar = np.atleast_1d(np.asarray(xstar, dtype=float))
    if r <= 0 or radius <= 0:
        raise ValueError("r and radius must be positive")
    f0 = f.value(xbar)
    if not np.isfinite(f0):
        raise NonFiniteValue("f(xbar) must be finite")
    grid = grid or Box.around(xbar, radius, 401 if f.dim == 1 else 41)
    X = grid_points(grid)
    X = X[np.linalg.norm(X - xbar, axis=1) <= radius]
    fx = f.values(X)
    rhs = f0 + (X - xbar) @ xstar - 0.5 * r * np.sum((X - xbar) ** 2, axis=1)
    tol = 1e-9 * (1.0 + np.abs(fx[np.isfinite(fx)]).max())
    bad = fx < rhs - tol
    params = {"r": r, "radius": radius, "grid": grid.to_json(), "tol": tol}
    if bad.any():
        idx = np.flatnonzero(bad)
        k = idx[lexicographic_first(X[idx])]
        return fails("proximal-subgradient", {"kind": "prox_subgradient", "x": X[k],
                                              "fx": float(fx[k]), "rhs": float(rhs[k])},
                     params=params)
    return holds("proximal-subgradient", params=params)


def prox_fixed_point_check(f, space, xbar, xstar, lambda_list, search=None,
                           tol: float = 1e-6) -> Certificate:
    """Is ``{xbar}`` the tilted prox set at ``xbar`` for some ``lambda`` in the list?

    Once the fixed point holds at some ``lambda`` it must hold at every smaller
    tested ``lambda``; a violation is reported as an internal error.
    """
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    if not np.isfinite(f.value(xbar)):
        raise NonFiniteValue("f(xbar) must be finite")
    lams = sorted(float(v) for v in lambda_list)
    per = {}
    ok = []
    for lam in lams:
        res = envelope(f, space, lam, xbar, xstar, search)
        fixed = (not res.unbounded and len(res.minimizers) == 1
                 and np.linalg.norm(res.minimizers[0] - xbar) <= tol)
        ok.append(fixed)
        per[repr(lam)] = {"fixed": fixed, "unbounded": res.unbounded,
                          "minimizers": [m.tolist() for m in res.minimizers]}
    for i in range(len(lams)):
        if ok[i] and not all(ok[:i]):
            raise VarConvexError("prox fixed point holds at a lambda but fails at a smaller one")
    params = {"lambdas": lams, "per_lambda": per, "tol": tol}
    if any(ok):
        return holds("prox-fixed-point", params=params)
    lam = lams[0]
    return fails("prox-fixed-point", {"kind": "prox_not_fixed", "lambda": lam, **per[repr(lam)]},
                 params=params)


def envelope_gradient_check(f, space, lam, x, tilt=None, fd_step=None, search=None,
                            localize=False) -> Certificate:
    """Central differences of the envelope against ``J(x - P(x)) / lam``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = f.dim
    h = 1e-5 * (1.0 + float(np.linalg.norm(x))) if fd_step is None else float(fd_step)
    stencil = np.vstack([x] + [x + s * h * e for e in np.eye(n) for s in (1.0, -1.0)])
    search = search or default_search_box(f, stencil)
    res = envelope_batch(f, space, lam, stencil, tilt, search, localize)
    params = {"lambda": lam, "x": x, "fd_step": h, "p": space.p, "localized": localize}
    if any(r.unbounded or not r.single_valued for r in res):
        return inconclusive("envelope-gradient", "prox not single-valued on the stencil",
                            params=params)
    vals = [r.as_float() for r in res]
    fd = np.array([(vals[1 + 2 * i] - vals[2 + 2 * i]) / (2.0 * h) for i in range(n)])
    formula = duality_map(space, x - res[0].minimizers[0]) / lam
    tol = max(1e-4, 10.0 * h)
    err = float(np.abs(fd - formula).max())
    params.update(finite_difference=fd, formula=formula, max_error=err, tol=tol)
    if err > tol:
        return fails("envelope-gradient", {"kind": "gradient_mismatch", "x": x,
                                           "finite_difference": fd, "formula": formula},
                     params=params)
    return holds("envelope-gradient", params=params)
