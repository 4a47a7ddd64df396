import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from varconvex.catalog import catalog_get, catalog_names, min_of_quadratics
from varconvex.core import (
    PLUS_INF, Box, ExtReal, ExtRealError, GridTooLarge, Subdiff, UnknownFunction, ext_add,
    grid_points,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)
ext = st.one_of(finite, st.just(math.inf))


class TestExtReal:
    def test_rejects_nan_and_minus_inf(self):
        for bad in (math.nan, -math.inf):
            with pytest.raises(ExtRealError):
                ExtReal(bad)

    def test_finite_arithmetic_matches_floats(self):
        assert ExtReal(1.5) + 2.0 == 3.5
        assert 2.0 * ExtReal(1.5) == 3.0

    def test_inf_absorbs(self):
        assert (PLUS_INF + 3.0) == PLUS_INF
        assert (PLUS_INF * 2.0) == PLUS_INF
        assert not PLUS_INF.is_finite

    def test_undefined_products(self):
        with pytest.raises(ExtRealError):
            PLUS_INF * 0.0
        with pytest.raises(ExtRealError):
            PLUS_INF * -1.0

    def test_ordering(self):
        assert ExtReal(1.0) < PLUS_INF
        assert ExtReal(-5.0) < ExtReal(1.0)
        assert sorted([PLUS_INF, ExtReal(2.0), ExtReal(-1.0)])[0] == -1.0

    @given(ext, ext)
    def test_addition_commutes(self, a, b):
        assert ext_add(a, b) == ext_add(b, a)

    @given(ext, ext, ext)
    def test_inf_saturation_associates(self, a, b, c):
        left = ext_add(ext_add(a, b), c)
        right = ext_add(a, ext_add(b, c))
        if not left.is_finite or not right.is_finite:
            assert left == right == PLUS_INF
        else:
            assert left.value == pytest.approx(right.value, abs=1e-6)

    @given(ext)
    def test_sum_is_inf_iff_an_operand_is(self, a):
        assert (not ext_add(a, 1.0).is_finite) == (a == math.inf)


class TestBox:
    def test_grid_is_lexicographic(self):
        g = grid_points(Box([0, 0], [1, 1], 3))
        assert g.shape == (9, 2)
        assert np.array_equal(g[:3], [[0, 0], [0, 0.5], [0, 1]])
        order = np.lexsort(g.T[::-1])
        assert np.array_equal(order, np.arange(9))

    def test_two_point_grid_allowed(self):
        assert grid_points(Box([0], [1], 2)).ravel().tolist() == [0.0, 1.0]

    def test_invalid(self):
        with pytest.raises(ValueError):
            Box([1], [0], 5)
        with pytest.raises(ValueError):
            Box([0], [1], 1)

    def test_cap(self):
        with pytest.raises(GridTooLarge):
            grid_points(Box([0, 0, 0], [1, 1, 1], 300), cap=10**6)

    @given(st.floats(-5, 5), st.floats(0.01, 3), st.integers(1, 50))
    def test_around_has_exact_center(self, c, r, k):
        b = Box.around([c], r, 2 * k + 1)
        assert b.axes()[0][k] == c

    def test_spacing(self):
        assert Box([-1], [1], 5).spacing.tolist() == [0.5]


class TestCatalog:
    def test_unknown(self):
        with pytest.raises(UnknownFunction):
            catalog_get("no-such-function")

    def test_names(self):
        assert set(catalog_names()) == {
            "quadratic1d", "abs", "neg_quadratic", "wshape", "indicator_interval", "cubic",
            "quad2d", "saddle"}

    @pytest.mark.parametrize("name,x,expected", [
        ("quadratic1d", [3.0], 4.5),
        ("abs", [-2.0], 2.0),
        ("neg_quadratic", [2.0], -2.0),
        ("wshape", [0.5], 0.25),
        ("indicator_interval", [1.0], 0.0),
        ("indicator_interval", [1.5], math.inf),
        ("cubic", [-2.0], -8.0),
        ("quad2d", [3.0, 4.0], 12.5),
        ("saddle", [1.0, 2.0], -3.0),
    ])
    def test_values(self, name, x, expected):
        assert catalog_get(name).value(x) == expected

    def test_designated_points_are_flagged(self):
        for name in catalog_names():
            f = catalog_get(name)
            assert f.designated_points
            for x, s in f.designated_points:
                assert f.flags.prox_regular_at(x, s)
                assert math.isfinite(f.value(x))

    def test_value_is_extreal(self):
        assert catalog_get("indicator_interval")([2.0]) == PLUS_INF

    def test_tilted_and_restricted(self):
        f = catalog_get("quadratic1d")
        assert f.tilted([1.0]).value([2.0]) == 0.0
        r = f.restricted(Box([-1], [1], 3))
        assert r.value([0.5]) == 0.125 and r.value([1.5]) == math.inf

    def test_min_of_quadratics(self):
        g = min_of_quadratics()
        assert g.value([1.0]) == 0.0 and g.value([0.0]) == 0.5
        assert g.subdiff([0.0]) is None


class TestSubdiff:
    def test_points(self):
        s = Subdiff.points([1.0])
        assert s.contains(np.array([[1.0], [1.1]])).tolist() == [True, False]

    def test_box_unbounded_side(self):
        s = catalog_get("indicator_interval").subdiff([1.0])
        assert s.contains(np.array([[0.0], [50.0], [-0.1]])).tolist() == [True, True, False]

    def test_kink(self):
        s = catalog_get("abs").subdiff([0.0])
        dual = np.linspace(-2, 2, 9)[:, None]
        assert s.select(dual).ravel().tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]

    def test_empty_outside_domain(self):
        s = catalog_get("indicator_interval").subdiff([3.0])
        assert not s.contains(np.array([[0.0]])).any()


def test_box_json_round_trip_keeps_grid():
    b = Box.around([0.3, -0.7], 0.25, 41)
    again = Box.from_json(b.to_json())
    assert np.array_equal(grid_points(again), grid_points(b))
