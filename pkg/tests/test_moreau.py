import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize, minimize_scalar

from varconvex.banach import PNormSpace, duality_map
from varconvex.catalog import catalog_get, min_of_quadratics
from varconvex.core import Box
from varconvex.moreau import (
    UNBOUNDED, ProxBoundInconsistency, envelope, envelope_batch, envelope_gradient_check, prox,
    prox_bound_threshold, prox_fixed_point_check, proximal_subgradient_check, tilt_relation_check,
)

H1 = PNormSpace(1, 2.0)
lams = st.floats(0.05, 2.0)
xs = st.floats(-2.0, 2.0)


def huber(x, lam):
    return x * x / (2 * lam) if abs(x) <= lam else abs(x) - lam / 2


def brute_1d(f, lam, x, tilt, lo, hi):
    """Independent envelope oracle: dense scan then bounded scalar refinement."""
    obj = lambda w: f.value([w]) - tilt * w + (w - x) ** 2 / (2 * lam)  # noqa: E731
    grid = np.linspace(lo, hi, 20001)
    vals = f.values(grid[:, None]) - tilt * grid + (grid - x) ** 2 / (2 * lam)
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(obj, bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    return min(res.fun, vals[k])


class TestClosedForms:
    @given(lams, xs)
    def test_quadratic(self, lam, x):
        r = envelope(catalog_get("quadratic1d"), H1, lam, [x])
        assert r.as_float() == pytest.approx(x * x / (2 * (1 + lam)), abs=1e-9)
        assert r.minimizers[0][0] == pytest.approx(x / (1 + lam), abs=1e-7)

    @given(lams, xs)
    def test_abs_is_huber(self, lam, x):
        r = envelope(catalog_get("abs"), H1, lam, [x])
        assert r.as_float() == pytest.approx(huber(x, lam), abs=1e-9)
        soft = np.sign(x) * max(abs(x) - lam, 0.0)
        assert r.minimizers[0][0] == pytest.approx(soft, abs=1e-7)

    @given(lams, st.floats(-3, 3))
    def test_indicator_is_scaled_squared_distance(self, lam, x):
        r = envelope(catalog_get("indicator_interval"), H1, lam, [x])
        d = max(abs(x) - 1.0, 0.0)
        assert r.as_float() == pytest.approx(d * d / (2 * lam), abs=1e-9)
        assert r.minimizers[0][0] == pytest.approx(np.clip(x, -1, 1), abs=1e-7)

    @given(st.floats(0.05, 0.9), st.floats(-1, 1))
    def test_neg_quadratic_below_threshold(self, lam, x):
        r = envelope(catalog_get("neg_quadratic"), H1, lam, [x])
        assert r.as_float() == pytest.approx(-x * x / (2 * (1 - lam)), rel=1e-8, abs=1e-9)

    @given(lams, xs, st.floats(-1, 1))
    def test_tilted_quadratic(self, lam, x, t):
        r = envelope(catalog_get("quadratic1d"), H1, lam, [x], tilt=[t])
        w = (x + lam * t) / (1 + lam)
        expected = 0.5 * w * w - t * w + (w - x) ** 2 / (2 * lam)
        assert r.as_float() == pytest.approx(expected, abs=1e-9)

    def test_examples(self):
        assert envelope(catalog_get("quadratic1d"), H1, 1.0, [2.0]).as_float() == pytest.approx(1.0, abs=1e-12)
        r = envelope(catalog_get("neg_quadratic"), H1, 0.5, [1.0])
        assert r.as_float() == pytest.approx(-1.0) and r.minimizers[0][0] == pytest.approx(2.0)
        assert envelope(catalog_get("neg_quadratic"), H1, 2.0, [0.0]).value is UNBOUNDED
        r = envelope(catalog_get("abs"), H1, 1.0, [3.0])
        assert r.as_float() == pytest.approx(2.5) and r.minimizers[0][0] == pytest.approx(2.0)
        assert prox(catalog_get("indicator_interval"), H1, 1.0, [5.0])[0][0] == pytest.approx(1.0, abs=1e-9)

    def test_two_minimizers(self):
        g = min_of_quadratics()
        r = envelope(g, H1, 10.0, [0.0])
        assert len(r.minimizers) == 2
        got = sorted(m[0] for m in r.minimizers)
        assert got == pytest.approx([-10 / 11, 10 / 11], abs=1e-7)

    def test_nonpositive_lambda(self):
        from varconvex.core import LambdaNonPositive
        with pytest.raises(LambdaNonPositive):
            envelope(catalog_get("abs"), H1, 0.0, [0.0])


class TestAgainstBruteForce:
    @pytest.mark.parametrize("name", ["wshape", "cubic", "abs"])
    @pytest.mark.parametrize("lam", [0.1, 0.3])
    def test_localized_envelope(self, name, lam):
        f = catalog_get(name)
        box = Box([-1.0], [1.0], 2001)
        for x in np.linspace(-0.8, 0.8, 7):
            for t in (-0.3, 0.0, 0.2):
                got = envelope(f, H1, lam, [x], [t], box, localize=True).as_float()
                assert got == pytest.approx(brute_1d(f, lam, x, t, -1.0, 1.0), abs=1e-9)

    def test_p_norm_2d(self):
        f = catalog_get("quad2d")
        sp = PNormSpace(2, 1.5)
        lam = 0.5
        for x in ([1.0, -0.5], [0.3, 0.9]):
            x = np.array(x)
            obj = lambda w: 0.5 * w @ w + np.linalg.norm(w - x, ord=1.5) ** 2 / (2 * lam)  # noqa: E731
            ref = min(minimize(obj, x0, method="Nelder-Mead",
                               options={"xatol": 1e-11, "fatol": 1e-14, "maxiter": 20000}).fun
                      for x0 in (x, np.zeros(2), x / 2))
            assert envelope(f, sp, lam, x).as_float() == pytest.approx(ref, abs=1e-8)


class TestProperties:
    @given(st.sampled_from(["quadratic1d", "abs", "wshape", "indicator_interval"]), lams, xs)
    def test_envelope_below_function(self, name, lam, x):
        f = catalog_get(name)
        r = envelope(f, H1, min(lam, 0.45), [x])
        assert r.as_float() <= f.value([x]) + 1e-12

    @given(st.sampled_from(["quadratic1d", "abs", "wshape"]), xs, lams, lams)
    def test_nonincreasing_in_lambda(self, name, x, a, b):
        f = catalog_get(name)
        lo, hi = sorted((min(a, 0.45), min(b, 0.45)))
        e_lo = envelope(f, H1, lo, [x]).as_float()
        e_hi = envelope(f, H1, hi, [x]).as_float()
        assert e_hi <= e_lo + 1e-10

    def test_batch_matches_single(self):
        f = catalog_get("wshape")
        X = np.linspace(-1, 1, 9)[:, None]
        batch = envelope_batch(f, H1, 0.3, X)
        single = [envelope(f, H1, 0.3, x) for x in X]
        assert [b.as_float() for b in batch] == [s.as_float() for s in single]


class TestProxBound:
    def test_neg_quadratic_threshold(self):
        grid = np.round(np.arange(0.05, 1.51, 0.05), 10)
        rep = prox_bound_threshold(catalog_get("neg_quadratic"), H1, grid)
        assert 0.95 <= rep.lambda_zero_lower <= 1.0 <= rep.lambda_zero_upper <= 1.05

    def test_convex_is_prox_bounded_everywhere(self):
        rep = prox_bound_threshold(catalog_get("abs"), H1, [0.5, 1.0, 2.0])
        assert rep.lambda_zero_lower == 2.0 and rep.lambda_zero_upper == np.inf

    def test_cubic_not_prox_bounded(self):
        rep = prox_bound_threshold(catalog_get("cubic"), H1, [0.05, 0.1, 0.5])
        assert not rep.prox_bounded

    def test_grid_must_increase(self):
        with pytest.raises(ValueError):
            prox_bound_threshold(catalog_get("abs"), H1, [1.0, 0.5])

    def test_inconsistency_is_reported(self):
        from varconvex.core import TestFunction

        calls = {"n": 0}

        def erratic(X):
            calls["n"] += 1
            # behaves like -x^2 on odd calls and like x^2 on even calls
            return (-1.0 if calls["n"] % 2 else 1.0) * 0.5 * X[:, 0] ** 2

        with pytest.raises(ProxBoundInconsistency):
            prox_bound_threshold(TestFunction("erratic", 1, erratic), H1, [1.5, 2.0, 3.0, 4.0])


class TestTiltAndProximal:
    @pytest.mark.parametrize("name,x,s", [
        ("quadratic1d", [0.5], [0.2]), ("abs", [0.0], [0.4]), ("wshape", [0.1], [0.3]),
        ("indicator_interval", [1.0], [0.5]),
    ])
    def test_tilt_identity(self, name, x, s):
        assert tilt_relation_check(catalog_get(name), 0.3, x, s).holds

    def test_tilt_unbounded_is_inconclusive(self):
        cert = tilt_relation_check(catalog_get("neg_quadratic"), 2.0, [0.0], [0.0])
        assert cert.verdict.value == "Inconclusive"

    def test_proximal_subgradient(self):
        assert proximal_subgradient_check(catalog_get("wshape"), [0.0], [0.0], 2.0, 0.2).holds
        cert = proximal_subgradient_check(catalog_get("cubic"), [0.0], [0.0], 1.0, 0.6)
        assert cert.fails and cert.witness["x"][0] == pytest.approx(-0.6)

    def test_fixed_point(self):
        assert prox_fixed_point_check(catalog_get("wshape"), H1, [0.0], [0.0], [0.25]).holds
        assert prox_fixed_point_check(catalog_get("cubic"), H1, [0.0], [0.0], [0.05, 0.1],
                                      search=Box([-1], [1], 2001)).fails


class TestGradient:
    @pytest.mark.parametrize("name,x", [("quadratic1d", [0.7]), ("abs", [1.3]), ("wshape", [0.6]),
                                        ("indicator_interval", [1.4])])
    def test_formula_1d(self, name, x):
        assert envelope_gradient_check(catalog_get(name), H1, 0.3, x).holds

    def test_formula_p_norm(self):
        sp = PNormSpace(2, 1.5)
        cert = envelope_gradient_check(catalog_get("quad2d"), sp, 0.5, [0.8, -0.3])
        assert cert.holds and cert.params["max_error"] < 1e-6

    def test_quadratic_closed_form_gradient(self):
        cert = envelope_gradient_check(catalog_get("quadratic1d"), H1, 0.5, [1.2])
        assert cert.params["formula"][0] == pytest.approx(1.2 / 1.5, abs=1e-7)

    def test_formula_uses_duality_map(self):
        sp = PNormSpace(2, 3.0)
        x = np.array([0.4, 0.9])
        r = envelope(catalog_get("quad2d"), sp, 0.5, x)
        g = duality_map(sp, x - r.minimizers[0]) / 0.5
        cert = envelope_gradient_check(catalog_get("quad2d"), sp, 0.5, x)
        assert np.allclose(cert.params["formula"], g)
