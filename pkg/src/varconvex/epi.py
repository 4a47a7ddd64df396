"""Set limits, epi-convergence and argmin convergence on grids.

"Infinitely many k" is read as "at least half of the tail" and "all large k"
as "every index in the tail", where the tail is ``k >= k_max / 2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .catalog import catalog_get, min_of_quadratics
from .certificate import Certificate, fails, holds
from .core import Box, TestFunction, grid_points

V_HI = 1e6
TAIL_RULE = "tail = k >= k_max/2; outer: >= half of tail (at least 1); inner: every tail index"


def tail_indices(k_max: int) -> list[int]:
    return [k for k in range(1, k_max + 1) if k >= k_max / 2]


def _as_sets(seq) -> list[np.ndarray]:
    out = []
    for c in seq:
        a = np.asarray(c, dtype=float)
        if a.ndim == 1:
            a = a.reshape(-1, 1) if a.size else np.zeros((0, 1))
        out.append(a)
    return out


def _hits(sets: list[np.ndarray], cands: np.ndarray, tol: float) -> np.ndarray:
    """For each candidate, the number of sets with a point within ``tol`` (sup-norm)."""
    count = np.zeros(len(cands), dtype=int)
    for s in sets:
        if len(s) == 0:
            continue
        d, _ = cKDTree(s).query(cands, k=1, p=np.inf)
        count += d <= tol
    return count


def _cluster(points: np.ndarray, tol: float) -> np.ndarray:
    """Greedy representatives: each kept point is farther than ``tol`` from earlier ones."""
    dim = points.shape[1] if points.ndim == 2 else 1
    points = np.asarray(points, dtype=float).reshape(-1, dim)
    if len(points) == 0:
        return points
    _, first = np.unique(points, axis=0, return_index=True)
    points = points[np.sort(first)]
    tree = cKDTree(points)
    covered = np.zeros(len(points), dtype=bool)
    keep = []
    for i in range(len(points)):
        if not covered[i]:
            keep.append(i)
            # a point is covered once some kept representative is within tol
            covered[tree.query_ball_point(points[i], tol, p=np.inf)] = True
    return points[keep]


def _limit(seq, cluster_tol: float, need) -> np.ndarray:
    sets = _as_sets(seq)
    k_max = len(sets)
    tail = [sets[k - 1] for k in tail_indices(k_max)]
    # candidates come from the latest sets first so representatives are the freshest
    cands = [s for s in reversed(tail) if len(s)]
    dim = sets[0].shape[1] if sets else 1
    if not cands:
        return np.zeros((0, dim))
    cands = np.vstack(cands)
    count = _hits(tail, cands, cluster_tol)
    return _cluster(cands[count >= need(len(tail))], cluster_tol)


def set_outer_limit(seq, cluster_tol: float) -> np.ndarray:
    """Points approximated by at least half of the tail sets."""
    return _limit(seq, cluster_tol, lambda t: max(1, t // 2))


def set_inner_limit(seq, cluster_tol: float) -> np.ndarray:
    """Points approximated by every tail set."""
    return _limit(seq, cluster_tol, lambda t: t)


def first_outside(a: np.ndarray, b: np.ndarray, tol: float) -> int | None:
    """Index of the first point of ``a`` farther than ``tol`` from ``b`` (sup-norm), or None."""
    if len(a) == 0:
        return None
    if len(b) == 0:
        return 0
    d, _ = cKDTree(b).query(a, k=1, p=np.inf)
    bad = np.flatnonzero(d > tol)
    return int(bad[0]) if len(bad) else None


def contained(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    """Every point of ``a`` lies within ``tol`` of ``b`` (sup-norm)."""
    if len(a) == 0:
        return True
    if len(b) == 0:
        return False
    d, _ = cKDTree(b).query(a, k=1, p=np.inf)
    return bool(np.all(d <= tol))


@dataclass(frozen=True)
class FunctionSequence:
    name: str
    generator: Callable[[int], TestFunction]
    k_max: int
    box: Box
    limit: TestFunction | None = None
    tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.k_max < 2:
            raise ValueError("k_max must be at least 2")

    def term(self, k: int) -> TestFunction:
        return self.generator(k)

    @property
    def dim(self) -> int:
        return self.box.dim


@dataclass(frozen=True)
class DiscreteEpigraph:
    """``epi f`` restricted to grid points and values in ``[v_lo, v_hi]``."""

    base_grid: Box
    values: np.ndarray

    @classmethod
    def of(cls, f: TestFunction, grid: Box) -> DiscreteEpigraph:
        v = f.values(grid_points(grid))
        return cls(grid, np.where(v > V_HI, np.inf, v))

    def contains(self, index: int, alpha: float) -> bool:
        return bool(np.isfinite(self.values[index]) and alpha >= self.values[index])

    def points(self, levels: np.ndarray) -> np.ndarray:
        """All ``(x, alpha)`` with ``alpha`` on ``levels`` and ``alpha >= f(x)``."""
        X = grid_points(self.base_grid)
        ix, il = np.nonzero(levels[None, :] >= self.values[:, None])
        return np.hstack([X[ix], levels[il][:, None]])


def _ball_offsets(dim: int, radius_cells: int) -> np.ndarray:
    r = np.arange(-radius_cells, radius_cells + 1)
    return np.array(np.meshgrid(*[r] * dim, indexing="ij")).reshape(dim, -1).T


def _ball_reduce(vals: np.ndarray, shape, radius_cells: int, op) -> tuple[np.ndarray, np.ndarray]:
    """Reduce ``vals`` over sup-norm index balls; returns reduced values and arg indices."""
    g = vals.reshape(shape)
    n = len(shape)
    idx = np.arange(g.size).reshape(shape)
    best = np.full(shape, np.nan)
    arg = np.full(shape, -1)
    pad = [(radius_cells, radius_cells)] * n
    gp = np.pad(g, pad, constant_values=np.nan)
    ip = np.pad(idx, pad, constant_values=-1)
    for off in _ball_offsets(n, radius_cells):
        sl = tuple(slice(radius_cells + o, radius_cells + o + s) for o, s in zip(off, shape))
        v = gp[sl]
        better = ~np.isnan(v) & (np.isnan(best) | op(v, best))
        best = np.where(better, v, best)
        arg = np.where(better, ip[sl], arg)
    return best.ravel(), arg.ravel()


def epi_converges(seq: FunctionSequence, limit: TestFunction, grid: Box, tol: float | None = None,
                  r0: float = 1.0) -> Certificate:
    """Sequence conditions for epi-convergence at every grid point.

    (a) liminf proxy: for every tail index, ``min f^k`` over the ball of
    radius ``max(r0/k, h)`` must be at least the smallest limit value over the
    same ball, minus ``tol``.  (b) limsup proxy: the recovery points
    ``argmin f^k + k|. - x|`` over the same ball keep ``f^k`` at most
    ``f(x) + tol`` for every tail index.  The adversarial sequence in (a) is a
    heuristic lower bound on the true adversary.
    """
    tol = seq.tol if tol is None else tol
    X = grid_points(grid)
    shape = (grid.points_per_axis,) * grid.dim
    h = float(grid.spacing.max())
    phi = limit.values(X)
    tail = tail_indices(seq.k_max)
    gap = np.full(len(X), np.inf)
    liminf = np.full(len(X), np.inf)
    limsup = np.full(len(X), -np.inf)
    phi_ball: dict[int, np.ndarray] = {}
    for k in tail:
        fk = seq.term(k).values(X)
        rad = int(np.floor(max(r0 / k, h) / h + 1e-9))
        if rad not in phi_ball:
            phi_ball[rad] = _ball_reduce(phi, shape, rad, np.less)[0]
        mins, _ = _ball_reduce(fk, shape, rad, np.less)
        liminf = np.minimum(liminf, mins)
        with np.errstate(invalid="ignore"):
            gap = np.minimum(gap, np.where(np.isinf(phi_ball[rad]) & np.isinf(mins), np.inf,
                                           mins - phi_ball[rad]))
        rec = _recovery_values(fk, shape, rad, float(k), h)
        limsup = np.maximum(limsup, rec)
    with np.errstate(invalid="ignore"):
        bad_a = gap < -tol
        bad_b = np.isfinite(phi) & ~(limsup <= phi + tol)
    params = {"sequence": seq.name, "k_max": seq.k_max, "tail": [tail[0], tail[-1]],
              "grid": grid.to_json(), "tol": tol, "r0": r0, "rule": TAIL_RULE,
              "adversary": "argmin over shrinking balls (heuristic lower bound)"}
    bad = bad_a | bad_b
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        return fails("epi-convergence", {
            "kind": "epi_liminf" if bad_a[i] else "epi_limsup", "x": X[i],
            "limit_value": float(phi[i]), "liminf_proxy": float(liminf[i]),
            "liminf_gap": float(gap[i]),
            "limsup_proxy": float(limsup[i]),
        }, params=params)
    return holds("epi-convergence", params=params)


def _recovery_values(fk, shape, rad, k, h):
    """``f^k`` at ``argmin_{|y - x| <= rad cells} f^k(y) + k |y - x|`` for each grid ``x``."""
    n = len(shape)
    g = fk.reshape(shape)
    pad = [(rad, rad)] * n
    gp = np.pad(g, pad, constant_values=np.inf)
    best_pen = np.full(shape, np.inf)
    best_val = np.full(shape, np.inf)
    for off in _ball_offsets(n, rad):
        sl = tuple(slice(rad + o, rad + o + s) for o, s in zip(off, shape))
        v = gp[sl]
        pen = v + k * h * float(np.linalg.norm(off))
        better = pen < best_pen
        best_pen = np.where(better, pen, best_pen)
        best_val = np.where(better, v, best_val)
    return best_val.ravel()


def inf_upper_semicontinuity_check(seq: FunctionSequence, limit: TestFunction, grid: Box,
                                   tol: float | None = None,
                                   epi_certificate: Certificate | None = None) -> Certificate:
    """``inf f >= limsup inf f^k`` with the limsup read as the tail maximum."""
    tol = seq.tol if tol is None else tol
    epi_certificate = epi_certificate or epi_converges(seq, limit, grid, tol)
    X = grid_points(grid)
    inf_lim = float(limit.values(X).min())
    tail = tail_indices(seq.k_max)
    infs = [float(seq.term(k).values(X).min()) for k in tail]
    tail_max = max(infs)
    params = {"inf_limit": inf_lim, "tail_max_inf": tail_max, "gap": inf_lim - tail_max,
              "tol": tol, "epi_convergence": epi_certificate.verdict.value, "rule": TAIL_RULE}
    if not epi_certificate.holds:
        params["note"] = "epi-convergence not established"
    if inf_lim < tail_max - tol:
        k = tail[int(np.argmax(infs))]
        return fails("inf-usc", {"kind": "inf_usc", "k": k, "inf_k": tail_max,
                                 "inf_limit": inf_lim}, params=params)
    return holds("inf-usc", params=params)


def grid_argmin(f: TestFunction, X: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
    v = f.values(X)
    m = float(v.min())
    return X[v <= m + rel_tol * (1.0 + abs(m))]


def argmin_convergence_check(seq: FunctionSequence, limit: TestFunction, grid: Box,
                             cluster_tol: float | None = None) -> Certificate:
    """Cluster points of grid argmins must lie in the limit's argmin set."""
    X = grid_points(grid)
    ctol = 2.0 * float(grid.spacing.max()) if cluster_tol is None else cluster_tol
    arg_sets = [grid_argmin(seq.term(k), X) for k in range(1, seq.k_max + 1)]
    lim_arg = grid_argmin(limit, X)
    outer = set_outer_limit(arg_sets, ctol)
    inner = set_inner_limit(arg_sets, ctol)
    params = {"cluster_tol": ctol, "limit_argmin_size": int(len(lim_arg)),
              "outer_limit": outer, "inner_limit": inner,
              "inner_strictly_inside_outer": bool(len(inner) < len(outer)), "rule": TAIL_RULE}
    i = first_outside(outer, lim_arg, ctol)
    if i is not None:
        return fails("argmin-convergence", {"kind": "argmin_cluster", "cluster_point": outer[i]},
                     params=params)
    if len(_cluster(lim_arg, ctol)) == 1:
        target = lim_arg[:1]
        for k in tail_indices(seq.k_max):
            if not contained(arg_sets[k - 1], target, ctol):
                return fails("argmin-convergence", {"kind": "argmin_not_convergent", "k": k,
                                                    "argmin_k": arg_sets[k - 1]}, params=params)
    return holds("argmin-convergence", params=params)


def epigraph_limits_check(seq: FunctionSequence, limit: TestFunction, grid: Box,
                          levels: np.ndarray | None = None,
                          cluster_tol: float | None = None) -> Certificate:
    """Second route: set limits of discretized epigraphs against the limit's epigraph.

    Checks ``outer(epi f^k) subset epi f`` and ``epi f subset inner(epi f^k)``
    at grid resolution.
    """
    X = grid_points(grid)
    h = float(grid.spacing.max())
    if levels is None:
        v = limit.values(X)
        fin = v[np.isfinite(v)]
        levels = np.linspace(fin.min(), fin.min() + 2.0, 41)
    dl = float(np.diff(levels).max()) if len(levels) > 1 else h
    ctol = cluster_tol if cluster_tol is not None else 2.0 * max(h, dl)
    epis = [DiscreteEpigraph.of(seq.term(k), grid).points(levels) for k in range(1, seq.k_max + 1)]
    target = DiscreteEpigraph.of(limit, grid).points(levels)
    outer = set_outer_limit(epis, ctol)
    inner = set_inner_limit(epis, ctol)
    params = {"cluster_tol": ctol, "levels": [float(levels[0]), float(levels[-1]), int(len(levels))],
              "outer_size": int(len(outer)), "inner_size": int(len(inner)), "rule": TAIL_RULE}
    i = first_outside(outer, target, ctol)
    if i is not None:
        return fails("epigraph-limits", {"kind": "epi_outer_excess", "point": outer[i]}, params=params)
    i = first_outside(target, inner, ctol)
    if i is not None:
        return fails("epigraph-limits", {"kind": "epi_inner_missing", "point": target[i]}, params=params)
    return holds("epigraph-limits", params=params)


# ---- sequence generators -------------------------------------------------

def _fn(name, fn, dim=1):
    return TestFunction(name, dim, fn)


def _gen_constant(params, box):
    f = catalog_get(params.get("function", "wshape"))
    return (lambda k: f), f


def _gen_uniform_shift(params, box):
    return (lambda k: _fn(f"abs+1/{k}", lambda xs: np.abs(xs[:, 0]) + 1.0 / k),
            catalog_get("abs"))


def _gen_truncation(params, box):
    limit = _fn("square", lambda xs: xs[:, 0] ** 2)
    return (lambda k: _fn(f"min(x^2,{k})", lambda xs: np.minimum(xs[:, 0] ** 2, float(k)))), limit


def _cell_indicator(center: float, half_width: float, name: str) -> TestFunction:
    return _fn(name, lambda xs: np.where(np.abs(xs[:, 0] - center) <= half_width, 0.0, np.inf))


def _gen_shrinking_singleton(params, box):
    hw = 0.5 * float(box.spacing.max()) * (1.0 + 1e-9)
    return (lambda k: _cell_indicator(1.0 / k, hw, f"singleton(1/{k})"),
            _cell_indicator(0.0, hw, "singleton(0)"))


def _gen_drifting_quadratic(params, box):
    limit = _fn("square", lambda xs: xs[:, 0] ** 2)
    return (lambda k: _fn(f"(x-1/{k})^2", lambda xs: (xs[:, 0] - 1.0 / k) ** 2)), limit


def _gen_oscillating_wells(params, box):
    wells = min_of_quadratics()

    def term(k):
        s = (-1.0) ** k
        return _fn(f"wells{k}", lambda xs: wells.fn(xs) + s * xs[:, 0] / k)

    return term, wells


GENERATORS = {
    "constant": _gen_constant,
    "uniform_shift": _gen_uniform_shift,
    "truncation": _gen_truncation,
    "shrinking_singleton": _gen_shrinking_singleton,
    "drifting_quadratic": _gen_drifting_quadratic,
    "oscillating_wells": _gen_oscillating_wells,
}

MANIFEST_DIR = Path(__file__).parent / "manifests"


def load_manifest(path) -> tuple[FunctionSequence, TestFunction]:
    data = json.loads(Path(path).read_text())
    return sequence_from_manifest(data)


def sequence_from_manifest(data: dict) -> tuple[FunctionSequence, TestFunction]:
    gen_id = data["generator_id"]
    if gen_id not in GENERATORS:
        raise KeyError(f"unknown generator {gen_id!r}")
    b = data["box"]
    box = Box(b["lo"], b["hi"], b["points_per_axis"])
    gen, limit = GENERATORS[gen_id](data.get("params", {}), box)
    seq = FunctionSequence(data["name"], gen, int(data["k_max"]), box, limit, float(data.get("tol", 1e-6)))
    return seq, limit


def shipped_manifests() -> list[Path]:
    return sorted(MANIFEST_DIR.glob("*.json"))


def run_suite_entry(seq: FunctionSequence, limit: TestFunction) -> dict:
    epi = epi_converges(seq, limit, seq.box)
    usc = inf_upper_semicontinuity_check(seq, limit, seq.box, epi_certificate=epi)
    arg = argmin_convergence_check(seq, limit, seq.box)
    return {"name": seq.name, "epi_convergence": epi, "inf_usc": usc, "argmin_convergence": arg,
            "all_hold": epi.holds and usc.holds and arg.holds}
