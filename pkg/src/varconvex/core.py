"""Extended reals, discretization boxes and the test-function abstraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import total_ordering
from typing import Callable, Sequence

import numpy as np

DEFAULT_GRID_CAP = 10**7


class VarConvexError(Exception):
    """Base class for all errors raised by this package."""


class ExtRealError(VarConvexError, ValueError):
    """An operation would leave the codomain (-inf, +inf]."""


class UnknownFunction(VarConvexError, KeyError):
    pass


class GridTooLarge(VarConvexError, ValueError):
    pass


class NonFiniteValue(VarConvexError, ValueError):
    pass


class EmptySample(VarConvexError, ValueError):
    pass


class LambdaNonPositive(VarConvexError, ValueError):
    pass


@total_ordering
@dataclass(frozen=True)
class ExtReal:
    """A value in (-inf, +inf] with saturating arithmetic.

    ``+inf`` is absorbing for addition and for multiplication by positive
    scalars.  NaN and ``-inf`` are rejected at construction.
    """

    value: float

    def __post_init__(self) -> None:
        v = float(self.value)
        if math.isnan(v) or v == -math.inf:
            raise ExtRealError(f"{self.value!r} is not an extended real in (-inf, +inf]")
        object.__setattr__(self, "value", v)

    @property
    def is_finite(self) -> bool:
        return self.value != math.inf

    def __add__(self, other: ExtReal | float) -> ExtReal:
        return ext_add(self, other)

    __radd__ = __add__

    def __mul__(self, c: float) -> ExtReal:
        c = float(c)
        if c < 0 and not self.is_finite:
            raise ExtRealError("negative multiple of +inf leaves (-inf, +inf]")
        if c == 0:
            if not self.is_finite:
                raise ExtRealError("0 * +inf is undefined")
            return ExtReal(0.0)
        return ExtReal(self.value * c)

    __rmul__ = __mul__

    def __lt__(self, other: ExtReal | float) -> bool:
        return self.value < _as_float(other)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, (ExtReal, int, float)):
            return self.value == _as_float(other)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self.value)

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        return "ExtReal(+inf)" if not self.is_finite else f"ExtReal({self.value!r})"


PLUS_INF = ExtReal(math.inf)


def _as_float(a: ExtReal | float) -> float:
    return a.value if isinstance(a, ExtReal) else float(a)


def ext_add(a: ExtReal | float, b: ExtReal | float) -> ExtReal:
    """Saturating addition; finite operands add exactly like floats."""
    x, y = ExtReal(_as_float(a)), ExtReal(_as_float(b))
    if not x.is_finite or not y.is_finite:
        return PLUS_INF
    return ExtReal(x.value + y.value)


def check_values(values: np.ndarray) -> np.ndarray:
    """Validate an array of function values as extended reals."""
    values = np.asarray(values, dtype=float)
    if np.isnan(values).any() or (values == -np.inf).any():
        raise ExtRealError("function produced NaN or -inf")
    return values


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with a uniform number of grid points per axis."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    points_per_axis: int
    center: tuple[float, ...] | None = field(default=None, compare=False)

    def __init__(self, lo: Sequence[float], hi: Sequence[float], points_per_axis: int,
                 center: Sequence[float] | None = None):
        lo_t = tuple(float(v) for v in np.atleast_1d(lo))
        hi_t = tuple(float(v) for v in np.atleast_1d(hi))
        if len(lo_t) != len(hi_t) or not lo_t:
            raise ValueError("lo and hi must be nonempty and of equal length")
        if any(a >= b for a, b in zip(lo_t, hi_t)):
            raise ValueError(f"need lo < hi componentwise, got {lo_t} / {hi_t}")
        if int(points_per_axis) < 2:
            raise ValueError("points_per_axis must be at least 2")
        object.__setattr__(self, "lo", lo_t)
        object.__setattr__(self, "hi", hi_t)
        object.__setattr__(self, "points_per_axis", int(points_per_axis))
        if center is not None:
            center = tuple(float(v) for v in np.atleast_1d(center))
            if len(center) != len(lo_t):
                raise ValueError("center has the wrong dimension")
        object.__setattr__(self, "center", center)

    @classmethod
    def around(cls, center: Sequence[float], radius: float, points_per_axis: int) -> Box:
        """Cube of half-width ``radius`` centred at ``center``.

        With an odd number of points the centre is itself a grid point.
        """
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(c - radius, c + radius, points_per_axis, center=c)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / (self.points_per_axis - 1)

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dim

    def axes(self) -> list[np.ndarray]:
        axes = []
        mids = self.center or tuple(0.5 * (a + b) for a, b in zip(self.lo, self.hi))
        for a, b, mid in zip(self.lo, self.hi, mids):
            ax = np.linspace(a, b, self.points_per_axis)
            if self.points_per_axis % 2 == 1:
                # keep the centre exact so window centres land on the grid
                ax[self.points_per_axis // 2] = mid
            axes.append(ax)
        return axes

    def contains(self, x: Sequence[float]) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(x >= np.array(self.lo)) and np.all(x <= np.array(self.hi)))

    def to_json(self) -> dict:
        d = {"lo": list(self.lo), "hi": list(self.hi), "points_per_axis": self.points_per_axis}
        if self.center is not None:
            d["center"] = list(self.center)
        return d

    @classmethod
    def from_json(cls, d: dict) -> Box:
        return cls(d["lo"], d["hi"], d["points_per_axis"], d.get("center"))


def grid_points(box: Box, cap: int = DEFAULT_GRID_CAP) -> np.ndarray:
    """Full tensor grid of ``box`` as an ``(m, n)`` array in lexicographic order."""
    if box.size > cap:
        raise GridTooLarge(f"grid of {box.size} points exceeds cap {cap}")
    mesh = np.meshgrid(*box.axes(), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class Subdiff:
    """Finite description of a subdifferential at one point.

    ``kind`` is ``"empty"``, ``"points"`` (rows of ``data``) or ``"box"``
    (``data`` is a ``(2, n)`` array of lower/upper bounds, possibly infinite).
    """

    kind: str
    data: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @classmethod
    def points(cls, *pts: Sequence[float]) -> Subdiff:
        return cls("points", np.atleast_2d(np.asarray(pts, dtype=float)))

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float]) -> Subdiff:
        return cls("box", np.array([np.atleast_1d(lo), np.atleast_1d(hi)], dtype=float))

    @classmethod
    def empty(cls) -> Subdiff:
        return cls("empty")

    def contains(self, xs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Membership mask for the rows of ``xs``."""
        xs = np.atleast_2d(xs)
        if self.kind == "empty":
            return np.zeros(len(xs), dtype=bool)
        if self.kind == "box":
            lo, hi = self.data
            return np.all((xs >= lo - tol) & (xs <= hi + tol), axis=1)
        d = np.abs(xs[:, None, :] - self.data[None, :, :]).max(axis=2)
        return (d <= tol).any(axis=1)

    def select(self, dual_points: np.ndarray) -> np.ndarray:
        """Subgradients to sample: the exact points, or dual grid points in the box."""
        if self.kind == "points":
            return self.data
        if self.kind == "box":
            return dual_points[self.contains(dual_points)]
        return np.zeros((0, dual_points.shape[1]))


@dataclass(frozen=True)
class FunctionFlags:
    convex: bool = False
    known_prox_regular_at: tuple[tuple[tuple[float, ...], tuple[float, ...]], ...] = ()

    def prox_regular_at(self, xbar: Sequence[float], xstar: Sequence[float], tol: float = 1e-12) -> bool:
        xb, xs = np.atleast_1d(xbar), np.atleast_1d(xstar)
        return any(
            np.allclose(xb, p, atol=tol) and np.allclose(xs, q, atol=tol)
            for p, q in self.known_prox_regular_at
        )


@dataclass(frozen=True, eq=False)
class TestFunction:
    """An extended-real-valued function on R^n.

    ``fn`` maps an ``(m, n)`` array to ``m`` values in (-inf, +inf].
    ``analytic_subdiff`` (optional) maps a point to a :class:`Subdiff`
    describing the limiting subdifferential there.
    """

    __test__ = False  # not a pytest class

    name: str
    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    analytic_subdiff: Callable[[np.ndarray], Subdiff] | None = None
    flags: FunctionFlags = FunctionFlags()
    bounding_box: Box | None = None
    designated_points: tuple[tuple[tuple[float, ...], tuple[float, ...]], ...] = ()
    formula: str = ""

    def values(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 1:
            xs = xs.reshape(-1, self.dim) if self.dim > 1 else xs.reshape(-1, 1)
        return check_values(np.asarray(self.fn(xs), dtype=float).reshape(len(xs)))

    def value(self, x: Sequence[float]) -> float:
        """Value at a single point as a float (``inf`` allowed)."""
        x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, self.dim)
        return float(self.values(x)[0])

    def __call__(self, x: Sequence[float]) -> ExtReal:
        return ExtReal(self.value(x))

    def subdiff(self, x: Sequence[float]) -> Subdiff | None:
        if self.analytic_subdiff is None:
            return None
        return self.analytic_subdiff(np.atleast_1d(np.asarray(x, dtype=float)))

    def descriptor(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "flags": {
                "convex": self.flags.convex,
                "known_prox_regular_at": [
                    {"x": list(p), "xstar": list(q)} for p, q in self.flags.known_prox_regular_at
                ],
            },
        }

    def tilted(self, tilt: Sequence[float]) -> TestFunction:
        """The function ``w -> f(w) - <tilt, w>``."""
        t = np.atleast_1d(np.asarray(tilt, dtype=float))
        base = self.fn
        return TestFunction(
            name=f"{self.name}-tilted",
            dim=self.dim,
            fn=lambda xs: base(xs) - xs @ t,
            flags=FunctionFlags(),
        )

    def restricted(self, box: Box) -> TestFunction:
        """``f + indicator(box)``: same values inside ``box``, ``+inf`` outside."""
        lo, hi = np.array(box.lo), np.array(box.hi)
        base = self.fn
        slack = 1e-12 * (1 + np.abs(lo) + np.abs(hi))

        def fn(xs: np.ndarray) -> np.ndarray:
            inside = np.all((xs >= lo - slack) & (xs <= hi + slack), axis=1)
            out = np.full(len(xs), np.inf)
            if inside.any():
                out[inside] = base(xs[inside])
            return out

        return TestFunction(name=f"{self.name}|box", dim=self.dim, fn=fn, flags=self.flags)


def as_points(x: Sequence[float] | np.ndarray, dim: int) -> np.ndarray:
    """Coerce one point or many to an ``(m, dim)`` float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim <= 1:
        return arr.reshape(1, dim) if arr.size == dim else arr.reshape(-1, dim)
    return arr
