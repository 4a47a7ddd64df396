"""Built-in test functions.

Entries are registered at import time and looked up by name.  User code may
add its own entries with :func:`register`; there is no expression parser.
"""

from __future__ import annotations

import numpy as np

from .core import Box, FunctionFlags, Subdiff, TestFunction, UnknownFunction

_REGISTRY: dict[str, TestFunction] = {}

ORIGIN_1D = ((0.0,), (0.0,))
ORIGIN_2D = ((0.0, 0.0), (0.0, 0.0))


def register(f: TestFunction) -> TestFunction:
    if f.name in _REGISTRY:
        raise ValueError(f"function {f.name!r} already registered")
    _REGISTRY[f.name] = f
    return f


def catalog_get(name: str) -> TestFunction:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownFunction(f"unknown function {name!r}; known: {sorted(_REGISTRY)}") from None


def catalog_names() -> list[str]:
    return list(_REGISTRY)


def _box(dim: int) -> Box:
    return Box([-3.0] * dim, [3.0] * dim, 601 if dim == 1 else 61)


def _flags(convex: bool, point) -> FunctionFlags:
    return FunctionFlags(convex=convex, known_prox_regular_at=(point,))


def _kink_subdiff(slope):
    """Subdifferential of ``|x| + g(x)`` in 1D: ``slope(x)`` off zero, ``[-1, 1]`` at zero."""

    def sub(x: np.ndarray) -> Subdiff:
        if x[0] == 0.0:
            return Subdiff.box([-1.0], [1.0])
        return Subdiff.points([slope(x[0])])

    return sub


def _interval_subdiff(x: np.ndarray) -> Subdiff:
    v = x[0]
    if abs(v) < 1.0:
        return Subdiff.points([0.0])
    if v == 1.0:
        return Subdiff.box([0.0], [np.inf])
    if v == -1.0:
        return Subdiff.box([-np.inf], [0.0])
    return Subdiff.empty()


def _interval_indicator(xs: np.ndarray) -> np.ndarray:
    return np.where(np.abs(xs[:, 0]) <= 1.0, 0.0, np.inf)


register(TestFunction(
    "quadratic1d", 1,
    lambda xs: 0.5 * xs[:, 0] ** 2,
    lambda x: Subdiff.points([x[0]]),
    _flags(True, ORIGIN_1D), _box(1), (ORIGIN_1D,), "x^2/2",
))

register(TestFunction(
    "abs", 1,
    lambda xs: np.abs(xs[:, 0]),
    _kink_subdiff(lambda v: float(np.sign(v))),
    _flags(True, ORIGIN_1D), _box(1), (ORIGIN_1D,), "|x|",
))

register(TestFunction(
    "neg_quadratic", 1,
    lambda xs: -0.5 * xs[:, 0] ** 2,
    lambda x: Subdiff.points([-x[0]]),
    _flags(False, ORIGIN_1D), _box(1), (ORIGIN_1D,), "-x^2/2",
))

register(TestFunction(
    "wshape", 1,
    lambda xs: np.abs(xs[:, 0]) - xs[:, 0] ** 2,
    _kink_subdiff(lambda v: float(np.sign(v)) * (1.0 - 2.0 * abs(v))),
    _flags(False, ORIGIN_1D), _box(1), (ORIGIN_1D,), "|x| - x^2",
))

register(TestFunction(
    "indicator_interval", 1,
    _interval_indicator,
    _interval_subdiff,
    _flags(True, ((1.0,), (0.0,))), _box(1), (((1.0,), (0.0,)),), "indicator of [-1, 1]",
))

register(TestFunction(
    "cubic", 1,
    lambda xs: xs[:, 0] ** 3,
    lambda x: Subdiff.points([3.0 * x[0] ** 2]),
    _flags(False, ORIGIN_1D), _box(1), (ORIGIN_1D,), "x^3",
))

register(TestFunction(
    "quad2d", 2,
    lambda xs: 0.5 * (xs[:, 0] ** 2 + xs[:, 1] ** 2),
    lambda x: Subdiff.points([x[0], x[1]]),
    _flags(True, ORIGIN_2D), _box(2), (ORIGIN_2D,), "|x|^2/2",
))

register(TestFunction(
    "saddle", 2,
    lambda xs: xs[:, 0] ** 2 - xs[:, 1] ** 2,
    lambda x: Subdiff.points([2.0 * x[0], -2.0 * x[1]]),
    _flags(False, ORIGIN_2D), _box(2), (ORIGIN_2D,), "x1^2 - x2^2",
))


def min_of_quadratics(centers=(-1.0, 1.0), name: str = "min_two_quadratics") -> TestFunction:
    """``min_i (x - c_i)^2 / 2`` in 1D.  Not lower regular where the pieces tie."""
    c = np.asarray(centers, dtype=float)

    def fn(xs: np.ndarray) -> np.ndarray:
        return 0.5 * np.min((xs[:, :1] - c[None, :]) ** 2, axis=1)

    return TestFunction(name, 1, fn, bounding_box=_box(1), formula="min_i (x - c_i)^2 / 2")
