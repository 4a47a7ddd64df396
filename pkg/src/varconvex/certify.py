"""Certifiers for variational convexity and their cross-check.

Five criteria are checked on a shared attentive window:

``VC-def``
    affine-envelope construction with two-way graph matching;
``Thm3.4-ii``
    the local subgradient inequality over the window;
``phi-local-max-mono``
    sampled-extension surrogate for local maximal monotonicity;
``phi-local-mono``
    pairwise monotonicity of the attentive graph sample;
``envelope-convexity``
    midpoint convexity of tilted Moreau envelopes for a ladder of ``lambda``.

Every failing certificate carries a witness that :func:`replay` re-checks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .banach import PNormSpace
from .certificate import (
    Certificate, Verdict, fails, holds, inconclusive, jsonable, lexicographic_first,
)
from .core import Box, EmptySample, TestFunction, grid_points
from .moreau import envelope, envelope_batch, prox_bound_threshold, ProxBoundReport
from .parallel import parallel_map
from .subgradient import (
    AttentiveWindow, GraphSample, attentive_filter, is_regular_subgradient, regular_mask,
    sample_graph,
)

VC_DEF = "VC-def"
THM_II = "Thm3.4-ii"
MAX_MONO = "phi-local-max-mono"
MONO = "phi-local-mono"
ENV = "envelope-convexity"
CRITERIA = (VC_DEF, THM_II, MAX_MONO, MONO, ENV)

GENERAL_IMPLICATIONS = ((VC_DEF, THM_II), (THM_II, VC_DEF), (VC_DEF, MAX_MONO), (MAX_MONO, MONO))
PROX_IMPLICATIONS = ((MONO, ENV), (ENV, VC_DEF))

DEFAULT_LADDER = (0.4, 0.2, 0.1, 0.05)
PROX_BOUND_GRID = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0, 1.5, 2.0)


def default_points(dim: int) -> int:
    return 81 if dim == 1 else 21


def window_points(window: AttentiveWindow, dim: int) -> int:
    """Points per axis so the primal grid also resolves the dual radius (capped at 4x)."""
    base = default_points(dim) - 1
    ratio = window.radius_x / min(window.radius_x, window.radius_dual)
    half = min(int(np.ceil(0.5 * base * ratio)), 2 * base)
    return 2 * half + 1


def value_tol(values: np.ndarray) -> float:
    """``1e-7 (1 + max |value|)`` over the finite values."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    return 1e-7 * (1.0 + (float(np.abs(v).max()) if v.size else 0.0))


def _window_points(f: TestFunction, window: AttentiveWindow, grid: Box):
    X = grid_points(grid)
    X = X[window.in_u(X)]
    return X, f.values(X)


def _first_confirmed(rows: np.ndarray, confirm: Callable[[int], dict | None]) -> dict | None:
    """Walk candidate rows in lexicographic order; return the first confirmed witness."""
    order = np.lexsort(np.atleast_2d(rows).T[::-1])
    for k in order:
        w = confirm(int(k))
        if w is not None:
            return w
    return None


# ---- single-inequality evaluators shared by certifiers and replay ---------

def affine_gap(f: TestFunction, u, ustar, x) -> tuple[float, float]:
    """``(f(x), f(u) + <u*, x - u>)`` evaluated one point at a time."""
    u, ustar, x = (np.asarray(a, dtype=float) for a in (u, ustar, x))
    return f.value(x), f.value(u) + float(np.dot(ustar, x - u))


def monotone_product(x1, s1, x2, s2) -> float:
    x1, s1, x2, s2 = (np.asarray(a, dtype=float) for a in (x1, s1, x2, s2))
    return float(np.dot(s1 - s2, x1 - x2))


def _envelope_values(f, space, lam, points, tilt, search) -> list[float]:
    return [envelope(f, space, lam, p, tilt, search, localize=True).as_float() for p in points]


# ---- subgradient inequality ----------------------------------------------

def _affine_pieces(sample: GraphSample, X: np.ndarray) -> np.ndarray:
    diff = X[None, :, :] - sample.xs[:, None, :]
    return sample.fx[:, None] + np.einsum("mn,mgn->mg", sample.xstars, diff)


def certify_subgradient_inequality(f: TestFunction, window: AttentiveWindow, sample: GraphSample,
                                   grid: Box) -> Certificate:
    """``f(x) >= f(u) + <u*, x - u>`` for attentive sample pairs and grid ``x`` in ``U``."""
    filt = attentive_filter(sample, window)
    if len(filt) == 0:
        raise EmptySample("attentive sample is empty")
    X, fX = _window_points(f, window, grid)
    tol = value_tol(fX)
    params = {"tol": tol, "entries": len(filt), "grid": grid.to_json()}
    witness = _minorant_witness(f, filt, X, fX, tol)
    if witness:
        return fails(THM_II, witness, window=window, params=params)
    return holds(THM_II, window=window, params=params)


def _minorant_witness(f, filt, X, fX, tol) -> dict | None:
    P = _affine_pieces(filt, X)
    bad = np.isfinite(fX)[None, :] & (fX[None, :] < P - tol)
    if not bad.any():
        return None
    ie, ig = np.nonzero(bad)
    rows = np.hstack([filt.xs[ie], filt.xstars[ie], X[ig]])

    def confirm(k):
        lhs, rhs = affine_gap(f, filt.xs[ie[k]], filt.xstars[ie[k]], X[ig[k]])
        if lhs < rhs - tol:
            return {"kind": "affine_minorant", "u": filt.xs[ie[k]], "ustar": filt.xstars[ie[k]],
                    "x": X[ig[k]], "lhs": lhs, "rhs": rhs, "tol": tol}
        return None

    return _first_confirmed(rows, confirm)


# ---- VC-def ---------------------------------------------------------------

def build_affine_envelope(f: TestFunction, window: AttentiveWindow, sample: GraphSample) -> TestFunction:
    """Pointwise maximum of the affine functions ``f(u) + <u*, . - u>`` over the sample."""
    filt = attentive_filter(sample, window)
    if len(filt) == 0:
        raise EmptySample("attentive sample is empty")
    us, ss, fu = filt.xs.copy(), filt.xstars.copy(), filt.fx.copy()

    def fn(xs: np.ndarray) -> np.ndarray:
        return (fu[:, None] + np.einsum("mn,mgn->mg", ss, xs[None, :, :] - us[:, None, :])).max(axis=0)

    return TestFunction(f"{f.name}-affine-envelope", f.dim, fn)


def in_hull(points: np.ndarray, queries: np.ndarray, tol: float) -> np.ndarray:
    """Membership of ``queries`` in the convex hull of ``points`` (up to ``tol``)."""
    points = np.unique(np.atleast_2d(points), axis=0)
    queries = np.atleast_2d(queries)
    out = np.zeros(len(queries), dtype=bool)
    if len(queries) == 0:
        return out
    lo, hi = points.min(axis=0) - tol, points.max(axis=0) + tol
    box = np.all((queries >= lo) & (queries <= hi), axis=1)
    if points.shape[1] == 1 or len(points) == 1:
        return box
    m = len(points)
    a_ub = np.vstack([points.T, -points.T])
    for i in np.flatnonzero(box):
        # convex weights reproducing the query to within tol in every coordinate
        b_ub = np.concatenate([queries[i] + tol, -(queries[i] - tol)])
        res = linprog(np.zeros(m), A_ub=a_ub, b_ub=b_ub, A_eq=np.ones((1, m)), b_eq=[1.0],
                      bounds=[(0, None)] * m, method="highs")
        out[i] = res.status == 0
    return out


def certify_variational_convexity_def(f: TestFunction, window: AttentiveWindow, sample: GraphSample,
                                      grid: Box, dual_grid: Box) -> Certificate:
    """Affine-envelope construction with two-way matching of subgradient graphs.

    (0) the envelope minorizes ``f`` on ``U``; (a) at every attentive sample
    pair the values agree and ``x*`` is an envelope subgradient; (b) every
    grid pair of ``U x V`` in the envelope's graph with matching value is a
    regular subgradient pair of ``f`` with ``f(x) < f(xbar) + eps``.
    """
    filt = attentive_filter(sample, window)
    if len(filt) == 0:
        raise EmptySample("attentive sample is empty")
    X, fX = _window_points(f, window, grid)
    tol = value_tol(fX)
    h = float(grid.spacing.max())
    params = {"tol": tol, "entries": len(filt), "grid": grid.to_json(),
              "dual_grid": dual_grid.to_json(), "hull_test": "exact active-set convex hull"}

    w = _minorant_witness(f, filt, X, fX, tol)
    if w:
        return fails(VC_DEF, {**w, "step": "minorant"}, window=window, params=params)

    Pe = _affine_pieces(filt, filt.xs)
    hat_e = Pe.max(axis=0)
    for i in range(len(filt)):
        if abs(hat_e[i] - filt.fx[i]) > tol:
            j = int(np.argmax(Pe[:, i]))
            lhs, rhs = affine_gap(f, filt.xs[j], filt.xstars[j], filt.xs[i])
            return fails(VC_DEF, {"kind": "affine_minorant", "step": "value-match", "u": filt.xs[j],
                                  "ustar": filt.xstars[j], "x": filt.xs[i], "lhs": lhs, "rhs": rhs,
                                  "tol": tol}, window=window, params=params)
        active = Pe[:, i] >= hat_e[i] - tol
        if not in_hull(filt.xstars[active], filt.xstars[i][None, :], 1e-9)[0]:
            return inconclusive(VC_DEF, "sample pair outside envelope subdifferential",
                                window=window, params=params)

    D = grid_points(dual_grid)
    D = D[window.in_v(D)]
    P = _affine_pieces(filt, X)
    hat = P.max(axis=0)
    match = np.isfinite(fX) & (np.abs(hat - fX) <= tol)
    px, pd = [], []
    for g in np.flatnonzero(match):
        active = P[:, g] >= hat[g] - tol
        ok = in_hull(filt.xstars[active], D, 1e-9 * (1.0 + np.abs(D).max()))
        for d in D[ok]:
            px.append(X[g])
            pd.append(d)
    params["graph_pairs"] = len(px)
    if px:
        PX, PD = np.array(px), np.array(pd)
        attentive = window.attentive(f.values(PX))
        regular = regular_mask(f, PX, PD, probe_radius=h)
        bad = ~(attentive & regular)
        if bad.any():
            idx = np.flatnonzero(bad)

            def confirm(k):
                i = idx[k]
                fx = f.value(PX[i])
                if not fx < window.f_center + window.eps_value:
                    return {"kind": "graph_not_attentive", "x": PX[i], "xstar": PD[i], "fx": fx,
                            "cap": window.f_center + window.eps_value}
                v = is_regular_subgradient(f, PX[i], PD[i], probe_radius=h)
                if not v.passes:
                    return {"kind": "graph_not_regular", "x": PX[i], "xstar": PD[i],
                            "probe": v.witness, "quotient": v.quotient, "tol": v.tol_liminf,
                            "probe_radius": h}
                return None

            w = _first_confirmed(np.hstack([PX[idx], PD[idx]]), confirm)
            if w:
                return fails(VC_DEF, {**w, "step": "reverse-inclusion"}, window=window, params=params)
    return holds(VC_DEF, window=window, params=params)


def certify_vc_shrinking_domain(f: TestFunction, window: AttentiveWindow, points_per_axis: int,
                                sample_hook: Callable | None = None, shrinks: int = 4) -> Certificate:
    """VC-def on ``window``, retried with ``U`` halved while ``V`` and ``eps`` stay fixed.

    The definition only asks for some neighbourhood ``U``; a ``U`` much wider
    than ``eps`` can contain graph points that the value cap excludes.  The
    first failing certificate (largest ``U``) is returned when no ``U`` works.
    """
    first = None
    tried = []
    for i in range(shrinks + 1):
        w = replace(window, radius_x=window.radius_x * 0.5**i)
        g, d = w.primal_grid(points_per_axis), w.dual_grid(points_per_axis)
        try:
            sample = sample_graph(f, w, g, d)
            if sample_hook is not None:
                sample = sample_hook(f, w, sample)
            cert = certify_variational_convexity_def(f, w, sample, g, d)
        except EmptySample:
            tried.append({"radius_x": w.radius_x, "verdict": "empty"})
            continue
        tried.append({"radius_x": w.radius_x, "verdict": cert.verdict.value})
        if cert.holds:
            return cert.with_notes(*([f"holds after {i} domain halving(s)"] if i else []),
                                   domain_shrinks=tried)
        if first is None and cert.fails:
            first = cert
    if first is not None:
        return first.with_notes(domain_shrinks=tried)
    return inconclusive(VC_DEF, "no domain radius produced a usable sample", window=window,
                        params={"domain_shrinks": tried})


# ---- monotonicity ---------------------------------------------------------

def certify_phi_local_monotone(sample_filtered: GraphSample, tol: float | None = None,
                               modulus: float = 0.0, window: AttentiveWindow | None = None) -> Certificate:
    """``<x1* - x2*, x1 - x2> >= modulus |x1 - x2|^2 - tol`` over all sample pairs."""
    s = sample_filtered
    if len(s) == 0:
        raise EmptySample("attentive sample is empty")
    tol = value_tol(s.fx) if tol is None else tol
    dx = s.xs[:, None, :] - s.xs[None, :, :]
    ds = s.xstars[:, None, :] - s.xstars[None, :, :]
    prod = np.sum(dx * ds, axis=2) - modulus * np.sum(dx * dx, axis=2)
    iu = np.triu_indices(len(s), k=1)
    bad = prod[iu] < -tol
    params = {"tol": tol, "entries": len(s), "pairs": int(len(iu[0])), "modulus": modulus}
    if bad.any():
        I, J = iu[0][bad], iu[1][bad]
        rows = np.hstack([s.xs[I], s.xstars[I], s.xs[J], s.xstars[J]])

        def confirm(k):
            i, j = I[k], J[k]
            v = monotone_product(s.xs[i], s.xstars[i], s.xs[j], s.xstars[j])
            sq = float(np.dot(s.xs[i] - s.xs[j], s.xs[i] - s.xs[j]))
            if v - modulus * sq < -tol:
                return {"kind": "nonmonotone_pair", "x1": s.xs[i], "x1star": s.xstars[i],
                        "x2": s.xs[j], "x2star": s.xstars[j], "product": v, "tol": tol,
                        "modulus": modulus}
            return None

        w = _first_confirmed(rows, confirm)
        if w:
            return fails(MONO, w, window=window, params=params)
    return holds(MONO, window=window, params=params)


def certify_phi_local_maximal_monotone(f: TestFunction, sample_filtered: GraphSample,
                                       window: AttentiveWindow, grid: Box, dual_grid: Box,
                                       tol: float | None = None) -> Certificate:
    """Sampled-extension surrogate for local maximal monotonicity.

    Grid pairs of ``U_eps x V`` (inner sub-window, at least one cell away from
    every sample pair) that are monotonically consistent with the whole sample
    must already be regular subgradient pairs of ``f``.  A Holds verdict means
    no monotone extension was found at this resolution.
    """
    s = sample_filtered
    mono = certify_phi_local_monotone(s, tol, window=window)
    surrogate = "sampled monotone extension, inner margin 2 cells, exclusion 1 cell"
    if mono.fails:
        return fails(MAX_MONO, mono.witness, window=window,
                     params={**mono.params, "surrogate": surrogate},
                     notes=("monotonicity already fails",))
    tol = mono.params["tol"]
    h = grid.spacing.max()
    hd = dual_grid.spacing.max()
    Z = grid_points(grid)
    fZ = f.values(Z)
    keep = (np.isfinite(fZ) & window.attentive(fZ)
            & (np.linalg.norm(Z - window.xbar, axis=1) < window.radius_x - 2 * h))
    Z = Z[keep]
    D = grid_points(dual_grid)
    D = D[np.linalg.norm(D - window.xstar, axis=1) < window.radius_dual - 2 * hd]
    cz, cd = [], []
    for z in Z:
        A = z[None, :] - s.xs                                     # (m, n)
        c = np.sum(s.xstars * A, axis=1)                          # (m,)
        cons = (D @ A.T - c[None, :]).min(axis=1) >= -tol         # (d,)
        near_x = np.abs(A).max(axis=1) <= h * (1 + 1e-9)
        if near_x.any():
            near = (np.abs(D[:, None, :] - s.xstars[None, near_x, :]).max(axis=2)
                    <= hd * (1 + 1e-9)).any(axis=1)
            cons &= ~near
        for d in D[cons]:
            cz.append(z)
            cd.append(d)
    params = {"tol": tol, "surrogate": surrogate, "spacing": float(h), "dual_spacing": float(hd),
              "candidates": len(cz)}
    notes = ("Holds means no monotone extension found at this resolution",)
    if cz:
        CZ, CD = np.array(cz), np.array(cd)
        reg = regular_mask(f, CZ, CD, probe_radius=float(h))
        params["regular_extensions"] = int(reg.sum())
        idx = np.flatnonzero(~reg)
        if len(idx):
            def confirm(k):
                i = idx[k]
                v = is_regular_subgradient(f, CZ[i], CD[i], probe_radius=float(h))
                if v.passes:
                    return None
                return {"kind": "monotone_extension", "z": CZ[i], "zstar": CD[i],
                        "probe": v.witness, "quotient": v.quotient, "tol": v.tol_liminf,
                        "probe_radius": float(h)}

            w = _first_confirmed(np.hstack([CZ[idx], CD[idx]]), confirm)
            if w:
                return fails(MAX_MONO, w, window=window, params=params, notes=notes)
    return holds(MAX_MONO, window=window, params=params, notes=notes)


# ---- envelope convexity ---------------------------------------------------

def _midpoint_pairs(coarse_shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index pairs of a coarse grid and the fine-grid (doubled) index of their midpoint."""
    n = len(coarse_shape)
    c = coarse_shape[0]
    fine = 2 * c - 1
    coarse_idx = np.array(list(itertools.product(range(c), repeat=n)))
    I, J = np.triu_indices(len(coarse_idx), k=1)
    fine_of = lambda sub: np.ravel_multi_index(tuple(sub.T), (fine,) * n)  # noqa: E731
    a = fine_of(2 * coarse_idx[I])
    b = fine_of(2 * coarse_idx[J])
    m = fine_of(coarse_idx[I] + coarse_idx[J])
    return a, b, m


def envelope_search_box(xbar: np.ndarray, radius: float, dim: int) -> Box:
    return Box.around(xbar, max(1.0, 4.0 * radius), 801 if dim == 1 else 81)


def _midpoint_scan(values: np.ndarray, pts: np.ndarray, center: np.ndarray, radius: float,
                   coarse: int, dim: int):
    a, b, m = _midpoint_pairs((coarse,) * dim)
    inside = ((np.linalg.norm(pts[a] - center, axis=1) <= radius * (1 + 1e-12))
              & (np.linalg.norm(pts[b] - center, axis=1) <= radius * (1 + 1e-12)))
    a, b, m = a[inside], b[inside], m[inside]
    tol = value_tol(values)
    excess = values[m] - 0.5 * (values[a] + values[b])
    return a, b, m, excess, tol


def certify_envelope_local_convexity(f: TestFunction, space: PNormSpace, xbar, xstar, lambda_list,
                                     radius: float, grid: Box | None = None,
                                     search: Box | None = None, radius_levels: int = 5,
                                     coarse_points: int | None = None,
                                     prox_report: ProxBoundReport | None = None) -> Certificate:
    """Midpoint convexity of ``x -> e^{xbar*}_lam f(x)`` near ``xbar`` for each ``lam``.

    Envelopes are taken over the search box as domain.  For each ``lam`` the
    radii ``radius, radius/2, ...`` (``radius_levels`` of them) are tried and
    the ``lam`` passes if some radius passes; the certificate holds when every
    ``lam`` passes.
    """
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    xstar = np.atleast_1d(np.asarray(xstar, dtype=float))
    n = f.dim
    c = coarse_points or (grid.points_per_axis if grid is not None else (21 if n == 1 else 7))
    search = search or envelope_search_box(xbar, radius, n)
    per = {}
    witness = None
    notes = ["envelopes computed with the search box as domain"]
    if prox_report is not None and not prox_report.prox_bounded:
        notes.append("not prox-bounded on the tested ladder; localized envelopes only")
    for lam in lambda_list:
        passed_at = None
        last_fail = None
        for lev in range(radius_levels):
            r = radius * 0.5**lev
            fine = Box.around(xbar, r, 2 * c - 1)
            pts = grid_points(fine)
            res = envelope_batch(f, space, lam, pts, xstar, search, localize=True)
            vals = np.array([e.as_float() for e in res])
            a, b, m, excess, tol = _midpoint_scan(vals, pts, xbar, r, c, n)
            bad = excess > tol
            if not bad.any():
                passed_at = r
                break
            last_fail = (r, a[bad], b[bad], tol)
        per[repr(float(lam))] = {"passes": passed_at is not None, "radius": passed_at}
        if passed_at is None and witness is None:
            r, A, B, tol = last_fail
            rows = np.hstack([pts[A], pts[B]])

            def confirm(k, lam=lam, A=A, B=B, tol=tol, r=r):
                x, y = pts[A[k]], pts[B[k]]
                ex, ey, em = _envelope_values(f, space, lam, [x, y, 0.5 * (x + y)], xstar, search)
                if em > 0.5 * (ex + ey) + tol:
                    return {"kind": "midpoint", "lambda": float(lam), "x": x, "y": y,
                            "e_x": ex, "e_y": ey, "e_mid": em, "tol": tol, "radius": r,
                            "tilt": xstar, "search": search.to_json(), "p": space.p}
                return None

            witness = _first_confirmed(rows, confirm)
            if witness is None:
                per[repr(float(lam))]["note"] = "batch violation not confirmed pointwise"
    params = {"lambdas": [float(v) for v in lambda_list], "radius": radius,
              "radius_levels": radius_levels, "coarse_points": c, "per_lambda": per,
              "search": search.to_json()}
    if prox_report is not None:
        params["prox_bound"] = prox_report.to_json()
    if witness is not None:
        return fails(ENV, witness, params=params, notes=tuple(notes))
    if not all(v["passes"] for v in per.values()):
        return inconclusive(ENV, "violations did not survive pointwise re-evaluation",
                            params=params, notes=tuple(notes))
    return holds(ENV, params=params, notes=tuple(notes))


def hilbert_envelope_shift_check(f: TestFunction, xbar, vbar, lam: float, grid: Box | None = None,
                                 search: Box | None = None, localize: bool = False,
                                 tol: float = 1e-8) -> Certificate:
    """Tilted envelope against the shifted plain envelope, with local-convexity agreement."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    vbar = np.atleast_1d(np.asarray(vbar, dtype=float))
    n = f.dim
    space = PNormSpace(n, 2.0)
    c = grid.points_per_axis if grid is not None else (11 if n == 1 else 5)
    r = float(0.5 * (np.array(grid.hi) - np.array(grid.lo)).max()) if grid is not None else 0.1
    fine = Box.around(xbar, r, 2 * c - 1)
    pts = grid_points(fine)
    shift = lam * vbar
    search = search or Box.around(xbar, 3.0, 1201 if n == 1 else 121)
    left = envelope_batch(f, space, lam, pts, vbar, search, localize)
    right = envelope_batch(f, space, lam, pts + shift, None, search, localize)
    params = {"lambda": lam, "vbar": vbar, "grid_radius": r, "tol": tol}
    if any(e.unbounded for e in left + right):
        return inconclusive("hilbert-envelope-shift", "an envelope is unbounded", params=params)
    lv = np.array([e.as_float() for e in left])
    rv = np.array([e.as_float() for e in right]) - pts @ vbar - 0.5 * lam * float(vbar @ vbar)
    gap = np.abs(lv - rv)
    params["max_gap"] = float(gap.max())
    bad = gap > tol * (1.0 + np.abs(lv))
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        return fails("hilbert-envelope-shift", {"kind": "shift_identity", "x": pts[k],
                                                "left": float(lv[k]), "right": float(rv[k])},
                     params=params)
    raw_right = np.array([e.as_float() for e in right])
    *_, ex_l, tol_l = _midpoint_scan(lv, pts, xbar, r, c, n)
    *_, ex_r, tol_r = _midpoint_scan(raw_right, pts + shift, xbar + shift, r, c, n)
    conv_l, conv_r = bool(np.all(ex_l <= tol_l)), bool(np.all(ex_r <= tol_r))
    params.update(tilted_locally_convex=conv_l, shifted_locally_convex=conv_r)
    if conv_l != conv_r:
        return fails("hilbert-envelope-shift", {"kind": "convexity_disagreement",
                                                "tilted": conv_l, "shifted": conv_r}, params=params)
    return holds("hilbert-envelope-shift", params=params)


# ---- auxiliary function check ----------------------------------------------

def auxiliary_minimum_check(f: TestFunction, window: AttentiveWindow, sample: GraphSample,
                            grid: Box, floor: float = -1e-9) -> Certificate:
    """``psi(y) = f(y) - fhat(xbar) - <xbar*, y - xbar> + |y - xbar|^2 / 2`` on the half ball.

    Holds when ``psi >= floor`` on the grid and every grid minimizer of ``psi``
    is within one cell of ``xbar``.
    """
    hat = build_affine_envelope(f, window, sample)
    xbar, xstar = window.xbar, window.xstar
    fhat0 = float(hat.values(xbar[None, :])[0])
    X = grid_points(grid)
    X = X[np.linalg.norm(X - xbar, axis=1) <= 0.5 * window.radius_x]
    d = X - xbar
    psi = f.values(X) - fhat0 - d @ xstar + 0.5 * np.sum(d * d, axis=1)
    h = float(grid.spacing.max())
    m = float(psi.min())
    arg = X[psi <= m + 1e-12 * (1.0 + abs(m))]
    far = np.abs(arg - xbar).max(axis=1) > h * (1 + 1e-9)
    params = {"min": m, "floor": floor, "fhat_at_center": fhat0, "argmin": arg, "spacing": h}
    if m < floor:
        k = int(np.argmin(psi))
        return fails("auxiliary-minimum", {"kind": "psi_negative", "y": X[k], "psi": float(psi[k])},
                     window=window, params=params)
    if far.any():
        return fails("auxiliary-minimum", {"kind": "psi_argmin_far", "y": arg[far][0]},
                     window=window, params=params)
    return holds("auxiliary-minimum", window=window, params=params)


# ---- replay ----------------------------------------------------------------

def replay(cert: Certificate, f: TestFunction) -> bool:
    """Re-evaluate the violated inequality recorded in a failing certificate.

    Returns True when the recomputed quantities equal the recorded ones
    bit for bit and still violate the inequality.
    """
    w = cert.witness or {}
    kind = w.get("kind")
    if kind == "affine_minorant":
        lhs, rhs = affine_gap(f, w["u"], w["ustar"], w["x"])
        return lhs == w["lhs"] and rhs == w["rhs"] and lhs < rhs - w["tol"]
    if kind == "nonmonotone_pair":
        v = monotone_product(w["x1"], w["x1star"], w["x2"], w["x2star"])
        sq = float(np.dot(np.subtract(w["x1"], w["x2"]), np.subtract(w["x1"], w["x2"])))
        return v == w["product"] and v - w["modulus"] * sq < -w["tol"]
    if kind in ("graph_not_regular", "monotone_extension"):
        x = w.get("x", w.get("z"))
        s = w.get("xstar", w.get("zstar"))
        v = is_regular_subgradient(f, x, s, probe_radius=w["probe_radius"])
        return (not v.passes) and v.quotient == w["quotient"] and np.array_equal(v.witness, w["probe"])
    if kind == "graph_not_attentive":
        fx = f.value(w["x"])
        return fx == w["fx"] and not fx < w["cap"]
    if kind == "midpoint":
        search = Box.from_json(w["search"])
        space = PNormSpace(f.dim, w["p"])
        x, y = np.asarray(w["x"]), np.asarray(w["y"])
        ex, ey, em = _envelope_values(f, space, w["lambda"], [x, y, 0.5 * (x + y)], w["tilt"], search)
        return (ex, ey, em) == (w["e_x"], w["e_y"], w["e_mid"]) and em > 0.5 * (ex + ey) + w["tol"]
    if kind == "prox_subgradient":
        return f.value(w["x"]) == w["fx"] and w["fx"] < w["rhs"]
    raise ValueError(f"no replay rule for witness kind {kind!r}")


# ---- equivalence matrix ------------------------------------------------------

@dataclass
class CertifyConfig:
    radius_x: float = 0.25
    radius_dual: float = 0.25
    eps_value: float = 0.05
    max_shrinks: int = 4
    points_per_axis: int | None = None
    lambda_ladder: tuple[float, ...] = DEFAULT_LADDER
    env_radius_levels: int = 5
    env_coarse_points: int | None = None
    p: float = 2.0
    seed: int = 0
    threads: int | None = None
    sample_hook: Callable | None = None

    def to_json(self) -> dict:
        return {
            "radius_x": self.radius_x, "radius_dual": self.radius_dual,
            "eps_value": self.eps_value, "max_shrinks": self.max_shrinks,
            "points_per_axis": self.points_per_axis, "lambda_ladder": list(self.lambda_ladder),
            "env_radius_levels": self.env_radius_levels,
            "env_coarse_points": self.env_coarse_points, "p": self.p, "seed": self.seed,
        }


@dataclass
class EquivalenceMatrix:
    function: str
    point: tuple[tuple[float, ...], tuple[float, ...]]
    rows: dict[str, Certificate]
    consistent: bool
    implications: list[tuple[str, str]]
    violations: list[tuple[str, str]]
    prox_bound: ProxBoundReport | None = None
    prox_regular_flag: bool = False
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return jsonable({
            "function": self.function,
            "point": {"x": list(self.point[0]), "xstar": list(self.point[1])},
            "rows": {k: self.rows[k].to_json() for k in CRITERIA},
            "consistent": self.consistent,
            "implications": [list(p) for p in self.implications],
            "violations": [list(p) for p in self.violations],
            "prox_bound": self.prox_bound.to_json() if self.prox_bound else None,
            "prox_regular_flag": self.prox_regular_flag,
            "config": self.config,
        })


def _closure(pairs) -> list[tuple[str, str]]:
    reach = {a: {b for x, b in pairs if x == a} for a, _ in pairs}
    changed = True
    while changed:
        changed = False
        for a in reach:
            new = set()
            for b in reach[a]:
                new |= reach.get(b, set())
            new -= reach[a] | {a}
            if new:
                reach[a] |= new
                changed = True
    return sorted((a, b) for a in reach for b in reach[a] if a != b)


def applicable_implications(prox_regular: bool, prox_bounded: bool) -> list[tuple[str, str]]:
    pairs = list(GENERAL_IMPLICATIONS)
    if prox_regular and prox_bounded:
        pairs += list(PROX_IMPLICATIONS)
    return _closure(pairs)


def implication_violations(rows: dict[str, Certificate], implications) -> list[tuple[str, str]]:
    return [(a, b) for a, b in implications if rows[a].holds and rows[b].fails]


def scaled_ladder(ladder, report: ProxBoundReport | None) -> tuple[float, ...]:
    """Scale the ladder below the prox-boundedness bracket when it reaches it."""
    ladder = tuple(float(v) for v in ladder)
    if report is None or not report.prox_bounded or not np.isfinite(report.lambda_zero_upper):
        return ladder
    if max(ladder) < report.lambda_zero_lower:
        return ladder
    s = 0.9 * report.lambda_zero_lower / max(ladder)
    return tuple(v * s for v in ladder)


class _Level:
    """Window, grids and sample at one shrink level (computed lazily)."""

    def __init__(self, f, window, ppa, hook):
        self.f, self.window, self.ppa, self.hook = f, window, ppa, hook
        self.grid = window.primal_grid(ppa)
        self.dual_grid = window.dual_grid(ppa)
        self._sample = None
        self._error = None

    def sample(self) -> GraphSample:
        if self._sample is None and self._error is None:
            try:
                s = sample_graph(self.f, self.window, self.grid, self.dual_grid)
                if self.hook is not None:
                    s = self.hook(self.f, self.window, s)
                self._sample = attentive_filter(s, self.window)
                if len(self._sample) == 0:
                    raise EmptySample("attentive sample is empty")
            except EmptySample as e:
                self._error = e
        if self._error is not None:
            raise self._error
        return self._sample


def _run_with_shrinking(name: str, levels: list[_Level], run: Callable[[_Level], Certificate]) -> Certificate:
    history = []
    cert = None
    for i, lev in enumerate(levels):
        try:
            cert = run(lev)
        except EmptySample as e:
            cert = inconclusive(name, f"empty sample: {e}", window=lev.window)
        history.append({"level": i, "radius_x": lev.window.radius_x, "verdict": cert.verdict.value})
        if cert.holds:
            break
    notes = tuple(f"shrink {h['level']}: radius_x={h['radius_x']:.6g} -> {h['verdict']}"
                  for h in history[1:])
    return cert.with_notes(*notes, shrink_history=history)


def equivalence_matrix(f: TestFunction, xbar, xstar, config: CertifyConfig | None = None) -> EquivalenceMatrix:
    """Run all five certifiers at ``(xbar, xbar*)`` and check the implication structure.

    General implications: VC-def <=> Thm3.4-ii, VC-def => max-mono => mono.
    When the point is flagged prox-regular and the function is prox-bounded on
    the tested ladder, mono => envelope-convexity => VC-def is added.  The
    matrix is inconsistent when an applicable ``A => B`` has ``A`` Holds and
    ``B`` FailsWithWitness; inconclusive rows never count.
    """
    cfg = config or CertifyConfig()
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    xstar = np.atleast_1d(np.asarray(xstar, dtype=float))
    n = f.dim
    base = AttentiveWindow.at(f, xbar, xstar, cfg.radius_x, cfg.radius_dual, cfg.eps_value)
    ppa = cfg.points_per_axis or window_points(base, n)
    h0 = 2.0 * cfg.radius_x / (ppa - 1)
    pre = is_regular_subgradient(f, xbar, xstar, probe_radius=h0)
    if not pre.passes:
        raise ValueError(f"xbar* is not a regular subgradient at xbar (probe {pre.witness})")
    space = PNormSpace(n, cfg.p)
    levels = [_Level(f, base.scaled(0.5**i), ppa, cfg.sample_hook) for i in range(cfg.max_shrinks + 1)]
    report = prox_bound_threshold(f, space, PROX_BOUND_GRID, probes=np.vstack([xbar, xbar + 1, xbar - 1]))
    ladder = scaled_ladder(cfg.lambda_ladder, report)
    prox_regular = f.flags.prox_regular_at(xbar, xstar)

    def vc(lev):
        lev.sample()  # an empty sample at this level is reported as such
        return certify_vc_shrinking_domain(f, lev.window, lev.ppa, cfg.sample_hook)

    def ii(lev):
        return certify_subgradient_inequality(f, lev.window, lev.sample(), lev.grid)

    def maxmono(lev):
        return certify_phi_local_maximal_monotone(f, lev.sample(), lev.window, lev.grid, lev.dual_grid)

    def mono(lev):
        return certify_phi_local_monotone(lev.sample(), window=lev.window)

    def env():
        return certify_envelope_local_convexity(
            f, space, xbar, xstar, ladder, cfg.radius_x, radius_levels=cfg.env_radius_levels,
            coarse_points=cfg.env_coarse_points, prox_report=report)

    for lev in levels:  # build samples up front so worker threads only read them
        try:
            lev.sample()
        except EmptySample:
            pass
    jobs = [
        lambda: _run_with_shrinking(VC_DEF, levels, vc),
        lambda: _run_with_shrinking(THM_II, levels, ii),
        lambda: _run_with_shrinking(MAX_MONO, levels, maxmono),
        lambda: _run_with_shrinking(MONO, levels, mono),
        env,
    ]
    certs = parallel_map(lambda job: job(), jobs, cfg.threads)
    rows = dict(zip(CRITERIA, certs))
    implications = applicable_implications(prox_regular, report.prox_bounded)
    violations = implication_violations(rows, implications)
    return EquivalenceMatrix(
        f.name, (tuple(xbar.tolist()), tuple(xstar.tolist())), rows, not violations,
        implications, violations, report, prox_regular, {**cfg.to_json(), "ladder_used": list(ladder)},
    )


def markdown_table(matrices: list[EquivalenceMatrix]) -> str:
    head = "| function | point | " + " | ".join(CRITERIA) + " | consistent |"
    sep = "|" + "---|" * (len(CRITERIA) + 3)
    lines = [head, sep]
    for m in matrices:
        cells = " | ".join(m.rows[c].verdict.symbol for c in CRITERIA)
        point = f"({', '.join(f'{v:g}' for v in m.point[0])}; {', '.join(f'{v:g}' for v in m.point[1])})"
        lines.append(f"| {m.function} | {point} | {cells} | {'yes' if m.consistent else 'NO'} |")
    return "\n".join(lines) + "\n"


# ---- helpers for randomized checks -------------------------------------------

def find_nonconvexity_witness(f: TestFunction, lo: float, hi: float, points: int = 201):
    """Midpoint-convexity violation of ``f`` itself on an open interval, or None."""
    xs = np.linspace(lo, hi, points)[1:-1]
    v = f.values(xs[:, None])
    tol = value_tol(v)
    for i in range(len(xs)):
        for j in range(i + 2, len(xs), 2):
            k = (i + j) // 2
            if v[k] > 0.5 * (v[i] + v[j]) + tol:
                return {"x": float(xs[i]), "y": float(xs[j]), "mid_value": float(v[k]),
                        "chord": float(0.5 * (v[i] + v[j]))}
    return None


@dataclass(frozen=True)
class WindowTrial:
    function: str
    window: AttentiveWindow
    verdicts: dict
    violations: tuple


def implication_trial(f: TestFunction, window: AttentiveWindow, ppa: int | None = None,
                      check_envelope: bool = False, space: PNormSpace | None = None,
                      ladder=DEFAULT_LADDER, env_levels: int = 5, env_coarse: int | None = None) -> WindowTrial:
    """Check one randomized window for broken one-way implications.

    Subgradient inequality => VC-def => mono always; mono => envelope-convexity
    only when ``check_envelope`` is set.
    """
    n = f.dim
    ppa = ppa or window_points(window, n)
    grid, dual = window.primal_grid(ppa), window.dual_grid(ppa)
    sample = attentive_filter(sample_graph(f, window, grid, dual), window)
    if len(sample) == 0:
        raise EmptySample("attentive sample is empty")
    ii = certify_subgradient_inequality(f, window, sample, grid)
    vc = certify_vc_shrinking_domain(f, window, ppa)
    # what VC implies is checked on the window where VC was established
    vc_window = vc.window if vc.holds and isinstance(vc.window, AttentiveWindow) else window
    if vc_window is not window:
        vc_sample = attentive_filter(sample_graph(f, vc_window, vc_window.primal_grid(ppa),
                                                  vc_window.dual_grid(ppa)), vc_window)
    else:
        vc_sample = sample
    mono = certify_phi_local_monotone(vc_sample, window=vc_window)
    verdicts = {THM_II: ii.verdict.value, VC_DEF: vc.verdict.value, MONO: mono.verdict.value}
    viol = []
    if ii.holds and vc.fails:
        viol.append((THM_II, VC_DEF))
    if vc.holds and mono.fails:
        viol.append((VC_DEF, MONO))
    if check_envelope and mono.holds:
        env = certify_envelope_local_convexity(
            f, space or PNormSpace(n, 2.0), window.xbar, window.xstar, ladder, vc_window.radius_x,
            radius_levels=env_levels, coarse_points=env_coarse)
        verdicts[ENV] = env.verdict.value
        if env.fails:
            viol.append((MONO, ENV))
    return WindowTrial(f.name, window, verdicts, tuple(viol))
