"""Regular-subgradient tests, subgradient-graph sampling and attentive windows."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .certificate import jsonable
from .core import Box, EmptySample, NonFiniteValue, TestFunction, grid_points

PASSES = "PassesAtResolution"
FAILS = "FailsWithWitness"

FINEST_PROBE = 1e-8
LIMINF_LEVELS = 3


def default_tol_liminf(xstar: np.ndarray) -> float:
    return 1e-6 * (1.0 + float(np.linalg.norm(xstar)))


def probe_directions(dim: int) -> np.ndarray:
    """Unit directions used to probe difference quotients."""
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if dim == 2:
        ang = np.arange(16) * (np.pi / 8)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    eye = np.eye(dim)
    corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * dim, indexing="ij")).reshape(dim, -1).T
    return np.vstack([eye, -eye, corners / np.sqrt(dim)])


def probe_distances(probe_radius: float) -> np.ndarray:
    levels = max(LIMINF_LEVELS, int(np.floor(np.log2(probe_radius / FINEST_PROBE))) + 1)
    return probe_radius * 0.5 ** np.arange(levels)


@dataclass(frozen=True)
class Quotients:
    """Difference quotients ``(f(x + d u) - f(x)) / d`` for a batch of base points.

    ``values`` has shape ``(m, k, L)`` for ``m`` points, ``k`` directions and
    ``L`` distances (coarse to fine).
    """

    points: np.ndarray
    directions: np.ndarray
    distances: np.ndarray
    values: np.ndarray

    def margins(self, xstars: np.ndarray, eps: float = 0.0) -> np.ndarray:
        """Liminf proxy of the regular-subgradient quotient plus ``eps``.

        Returns, for every base point ``i`` and candidate row ``xstars[i, j]``,
        the minimum over directions and the finest levels of
        ``q - <x*, u> + eps``.  Shape ``(m, c)``.
        """
        xstars = np.asarray(xstars, dtype=float)
        if xstars.ndim == 2:
            xstars = xstars[:, None, :]
        fine = self.values[:, :, -LIMINF_LEVELS:].min(axis=2)           # (m, k)
        lin = np.einsum("mcn,kn->mck", xstars, self.directions)        # (m, c, k)
        return (fine[:, None, :] - lin).min(axis=2) + eps

    def witness(self, i: int, xstar: np.ndarray) -> tuple[np.ndarray, float]:
        """Probe point with the most negative quotient for base point ``i``."""
        lin = self.directions @ np.asarray(xstar, dtype=float)
        q = self.values[i, :, -LIMINF_LEVELS:] - lin[:, None]
        k, l = np.unravel_index(np.argmin(q), q.shape)
        d = self.distances[-LIMINF_LEVELS:][l]
        return self.points[i] + d * self.directions[k], float(q[k, l])


def difference_quotients(f: TestFunction, points: np.ndarray, probe_radius: float) -> Quotients:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dirs = probe_directions(f.dim)
    dists = probe_distances(probe_radius)
    steps = dirs[:, None, :] * dists[None, :, None]                    # (k, L, n)
    probes = points[:, None, None, :] + steps[None]                    # (m, k, L, n)
    m, k, L = probes.shape[:3]
    fp = f.values(probes.reshape(-1, f.dim)).reshape(m, k, L)
    f0 = f.values(points)
    with np.errstate(invalid="ignore"):
        q = (fp - f0[:, None, None]) / dists[None, None, :]
    return Quotients(points, dirs, dists, q)


@dataclass(frozen=True)
class RegularVerdict:
    status: str
    witness: np.ndarray | None
    quotient: float
    spacing: float
    tol_liminf: float
    probe_radius: float

    @property
    def passes(self) -> bool:
        return self.status == PASSES

    def to_json(self) -> dict:
        return jsonable({
            "status": self.status, "witness": self.witness, "quotient": self.quotient,
            "spacing": self.spacing, "tol_liminf": self.tol_liminf,
            "probe_radius": self.probe_radius,
        })


def is_regular_subgradient(
    f: TestFunction,
    x: Sequence[float],
    xstar: Sequence[float],
    eps: float = 0.0,
    probe_radius: float = 1e-2,
    grid: Box | None = None,
    tol_liminf: float | None = None,
) -> RegularVerdict:
    """Resolution-limited check that ``xstar`` is an ``eps``-regular subgradient at ``x``.

    The quotient ``(f(x') - f(x) - <x*, x' - x>) / |x' - x|`` is probed along
    fixed directions at geometrically shrinking distances starting from
    ``probe_radius``; the minimum over the finest levels stands in for the
    liminf.  A pass is a necessary check only.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xstar = np.atleast_1d(np.asarray(xstar, dtype=float))
    if probe_radius <= 0:
        raise ValueError("probe_radius must be positive")
    if not np.isfinite(f.value(x)):
        raise NonFiniteValue(f"f({x.tolist()}) = +inf")
    tol = default_tol_liminf(xstar) if tol_liminf is None else tol_liminf
    qs = difference_quotients(f, x[None, :], probe_radius)
    margin = float(qs.margins(xstar[None, None, :], eps)[0, 0])
    spacing = float(grid.spacing.max()) if grid is not None else float(qs.distances[-1])
    if margin >= -tol:
        return RegularVerdict(PASSES, None, margin, spacing, tol, probe_radius)
    wit, q = qs.witness(0, xstar)
    return RegularVerdict(FAILS, wit, q, spacing, tol, probe_radius)


def regular_mask(
    f: TestFunction,
    xs: np.ndarray,
    xstars: np.ndarray,
    probe_radius: float = 1e-2,
    eps: float = 0.0,
) -> np.ndarray:
    """Vectorized :func:`is_regular_subgradient` over paired rows ``(xs[i], xstars[i])``."""
    xs = np.atleast_2d(xs)
    xstars = np.atleast_2d(xstars)
    if len(xs) == 0:
        return np.zeros(0, dtype=bool)
    uniq, inv = np.unique(xs, axis=0, return_inverse=True)
    inv = inv.ravel()
    qs = difference_quotients(f, uniq, probe_radius)
    fine = qs.values[:, :, -LIMINF_LEVELS:].min(axis=2)[inv]             # (m, k)
    margin = (fine - xstars @ qs.directions.T).min(axis=1) + eps
    tol = 1e-6 * (1.0 + np.linalg.norm(xstars, axis=1))
    return margin >= -tol


@dataclass(frozen=True)
class AttentiveWindow:
    """Neighbourhood ``U x V`` of ``(xbar, xbar*)`` plus the value cap ``f(xbar) + eps``.

    Distances use the Euclidean norm.
    """

    center_x: tuple[float, ...]
    center_xstar: tuple[float, ...]
    radius_x: float
    radius_dual: float
    eps_value: float
    f_center: float

    def __post_init__(self) -> None:
        for name in ("radius_x", "radius_dual", "eps_value"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not np.isfinite(self.f_center):
            raise NonFiniteValue("window centre must have a finite value")
        object.__setattr__(self, "center_x", tuple(float(v) for v in np.atleast_1d(self.center_x)))
        object.__setattr__(self, "center_xstar", tuple(float(v) for v in np.atleast_1d(self.center_xstar)))

    @classmethod
    def at(cls, f: TestFunction, xbar, xstar, radius_x=0.25, radius_dual=0.25, eps_value=0.05):
        return cls(tuple(np.atleast_1d(xbar)), tuple(np.atleast_1d(xstar)),
                   float(radius_x), float(radius_dual), float(eps_value), f.value(xbar))

    @property
    def xbar(self) -> np.ndarray:
        return np.array(self.center_x)

    @property
    def xstar(self) -> np.ndarray:
        return np.array(self.center_xstar)

    def scaled(self, factor: float) -> AttentiveWindow:
        return AttentiveWindow(self.center_x, self.center_xstar, self.radius_x * factor,
                               self.radius_dual * factor, self.eps_value * factor, self.f_center)

    def in_u(self, xs: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(xs) - self.xbar, axis=1) < self.radius_x

    def in_v(self, xstars: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(xstars) - self.xstar, axis=1) < self.radius_dual

    def attentive(self, fx: np.ndarray) -> np.ndarray:
        return np.asarray(fx) < self.f_center + self.eps_value

    def primal_grid(self, points_per_axis: int) -> Box:
        return Box.around(self.xbar, self.radius_x, points_per_axis)

    def dual_grid(self, points_per_axis: int) -> Box:
        return Box.around(self.xstar, self.radius_dual, points_per_axis)

    def to_json(self) -> dict:
        return {
            "center_x": list(self.center_x), "center_xstar": list(self.center_xstar),
            "radius_x": self.radius_x, "radius_dual": self.radius_dual,
            "eps_value": self.eps_value, "f_center": self.f_center,
        }


@dataclass(frozen=True)
class GraphSample:
    """Finite sample of ``(x, x*, f(x))`` triples from the subgradient graph."""

    xs: np.ndarray
    xstars: np.ndarray
    fx: np.ndarray
    provenance: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        xs = np.array(self.xs, dtype=float).reshape(len(self.fx), -1) if len(self.fx) else np.array(self.xs, dtype=float)
        xstars = np.array(self.xstars, dtype=float).reshape(xs.shape)
        fx = np.array(self.fx, dtype=float)
        if not np.all(np.isfinite(fx)):
            raise NonFiniteValue("graph sample entries need finite values")
        if self.provenance not in ("Analytic", "Numeric"):
            raise ValueError("provenance must be Analytic or Numeric")
        for a in (xs, xstars, fx):
            a.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "xstars", xstars)
        object.__setattr__(self, "fx", fx)

    def __len__(self) -> int:
        return len(self.fx)

    def subset(self, mask: np.ndarray) -> GraphSample:
        return GraphSample(self.xs[mask], self.xstars[mask], self.fx[mask], self.provenance, self.params)

    def with_entries(self, xs, xstars, fx) -> GraphSample:
        """A new sample with extra entries appended (used by tests and hooks)."""
        n = self.xs.shape[1]
        return GraphSample(
            np.vstack([self.xs, np.reshape(xs, (-1, n))]),
            np.vstack([self.xstars, np.reshape(xstars, (-1, n))]),
            np.concatenate([self.fx, np.ravel(fx)]),
            self.provenance, self.params,
        )

    def entries(self) -> Iterable[tuple[np.ndarray, np.ndarray, float]]:
        for i in range(len(self)):
            yield self.xs[i], self.xstars[i], float(self.fx[i])

    def to_jsonl(self) -> str:
        lines = [json.dumps({"header": jsonable({"provenance": self.provenance, **self.params})},
                            sort_keys=True)]
        for x, xs, fx in self.entries():
            lines.append(json.dumps({"x": x.tolist(), "xstar": xs.tolist(), "fx": fx}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> GraphSample:
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        header = rows[0]["header"]
        prov = header.pop("provenance")
        body = rows[1:]
        dim = len(body[0]["x"]) if body else 1
        return cls(
            np.array([r["x"] for r in body], dtype=float).reshape(-1, dim),
            np.array([r["xstar"] for r in body], dtype=float).reshape(-1, dim),
            np.array([r["fx"] for r in body], dtype=float),
            prov, header,
        )


def attentive_filter(sample: GraphSample, window: AttentiveWindow) -> GraphSample:
    """Entries with ``|x - xbar| < rx``, ``|x* - xbar*| < rd`` and ``f(x) < f(xbar) + eps``."""
    if len(sample) == 0:
        return sample
    keep = window.in_u(sample.xs) & window.in_v(sample.xstars) & window.attentive(sample.fx)
    return sample.subset(keep)


def _dedupe_pairs(xs: np.ndarray, xstars: np.ndarray) -> np.ndarray:
    _, idx = np.unique(np.hstack([xs, xstars]), axis=0, return_index=True)
    return np.sort(idx)


def sample_graph(
    f: TestFunction,
    window: AttentiveWindow,
    primal_grid: Box,
    dual_grid: Box,
    probe_radius: float | None = None,
) -> GraphSample:
    """Sample the subgradient graph of ``f`` inside ``window``.

    With an analytic subdifferential, each primal grid point contributes its
    exact subgradients (point kind) or the dual grid points inside the
    described box.  Otherwise every primal/dual grid pair passing the regular
    test at ``eps = 0`` is kept.  Both routes are then attentive-filtered.
    """
    X = grid_points(primal_grid)
    D = grid_points(dual_grid)
    fx = f.values(X)
    keep = np.isfinite(fx) & window.in_u(X) & window.attentive(fx)
    X, fx = X[keep], fx[keep]
    probe = float(primal_grid.spacing.min()) if probe_radius is None else probe_radius
    xs_out, xst_out = [], []
    if f.analytic_subdiff is not None:
        provenance = "Analytic"
        for x in X:
            sub = f.subdiff(x)
            sel = sub.select(D)
            if len(sel):
                xs_out.append(np.repeat(x[None, :], len(sel), axis=0))
                xst_out.append(sel)
    else:
        provenance = "Numeric"
        if len(X):
            qs = difference_quotients(f, X, probe)
            tol = 1e-6 * (1.0 + np.linalg.norm(D, axis=1))
            ok = qs.margins(np.broadcast_to(D, (len(X),) + D.shape)) >= -tol[None, :]
            for i in range(len(X)):
                sel = D[ok[i]]
                if len(sel):
                    xs_out.append(np.repeat(X[i][None, :], len(sel), axis=0))
                    xst_out.append(sel)
    n = f.dim
    xs = np.vstack(xs_out) if xs_out else np.zeros((0, n))
    xstars = np.vstack(xst_out) if xst_out else np.zeros((0, n))
    if len(xs):
        idx = _dedupe_pairs(xs, xstars)
        xs, xstars = xs[idx], xstars[idx]
    params = {
        "primal_grid": primal_grid.to_json(), "dual_grid": dual_grid.to_json(),
        "window": window.to_json(), "probe_radius": probe,
        "spacing": float(primal_grid.spacing.max()),
        "dual_spacing": float(dual_grid.spacing.max()),
    }
    sample = GraphSample(xs, xstars, f.values(xs) if len(xs) else np.zeros(0), provenance, params)
    sample = attentive_filter(sample, window)
    if len(sample) == 0:
        raise EmptySample("no subgradient pair survives the attentive window")
    return sample


def graph_closure(sample: GraphSample, f: TestFunction, resolution: float | None = None,
                  value_tol: float = np.inf) -> GraphSample:
    """Append limiting-subgradient candidates to a sample.

    Every primal grid point ``x`` of the sample adopts the subgradients of
    sampled neighbours within ``resolution`` (sup-norm) whose values differ
    from ``f(x)`` by at most ``value_tol``.  The default resolution is half
    the grid spacing, which makes the closure a no-op on a uniform grid.
    """
    if len(sample) == 0:
        return sample
    h = float(sample.params.get("spacing", 0.0))
    res = 0.5 * h if resolution is None else resolution
    grid = sample.params.get("primal_grid")
    if grid is not None:
        base = grid_points(Box.from_json(grid))
    else:
        base = np.unique(sample.xs, axis=0)
    fb = f.values(base)
    fin = np.isfinite(fb)
    base, fb = base[fin], fb[fin]
    new_x, new_s = [], []
    have = {(tuple(a), tuple(b)) for a, b in zip(sample.xs, sample.xstars)}
    for x, fv in zip(base, fb):
        near = (np.abs(sample.xs - x).max(axis=1) <= res) & (np.abs(sample.fx - fv) <= value_tol)
        for s in sample.xstars[near]:
            key = (tuple(x), tuple(s))
            if key not in have:
                have.add(key)
                new_x.append(x)
                new_s.append(s)
    if not new_x:
        return sample
    return sample.with_entries(np.array(new_x), np.array(new_s), f.values(np.array(new_x)))


@dataclass(frozen=True)
class ProxRegularityReport:
    found: bool
    r: float | None
    eps: float | None
    tried: list[tuple[float, float, bool]]

    def to_json(self) -> dict:
        return jsonable({"found": self.found, "r": self.r, "eps": self.eps, "tried": self.tried})


def prox_regularity_search(
    f: TestFunction,
    xbar,
    xstar,
    r_values=(0.5, 1, 2, 4, 8, 16, 32, 64),
    eps_values=(0.2, 0.1, 0.05, 0.025, 0.0125),
    points_per_axis: int | None = None,
) -> ProxRegularityReport:
    """Search for ``(r, eps)`` with the local quadratic minorization inequality.

    ``f(x) >= f(u) + <u*, x - u> - (r/2)|x - u|^2`` for grid ``x`` near ``xbar``
    and sampled ``(u, u*)`` with ``u`` near ``xbar``, ``u*`` near ``xbar*`` and
    ``f(u) < f(xbar) + eps``.
    """
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    xstar = np.atleast_1d(np.asarray(xstar, dtype=float))
    n = len(xbar)
    ppa = points_per_axis or (81 if n == 1 else 21)
    tried = []
    for eps in eps_values:
        window = AttentiveWindow.at(f, xbar, xstar, eps, eps, eps)
        grid = window.primal_grid(ppa)
        try:
            sample = sample_graph(f, window, grid, window.dual_grid(ppa))
        except EmptySample:
            continue
        X = grid_points(grid)
        X = X[window.in_u(X)]
        fX = f.values(X)
        fin = np.isfinite(fX)
        X, fX = X[fin], fX[fin]
        diff = X[None, :, :] - sample.xs[:, None, :]
        aff = sample.fx[:, None] + np.einsum("mn,mgn->mg", sample.xstars, diff)
        sq = np.sum(diff * diff, axis=2)
        tol = 1e-9 * (1.0 + np.abs(fX).max())
        for r in r_values:
            ok = bool(np.all(fX[None, :] >= aff - 0.5 * r * sq - tol))
            tried.append((float(r), float(eps), ok))
            if ok:
                return ProxRegularityReport(True, float(r), float(eps), tried)
    return ProxRegularityReport(False, None, None, tried)
