import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from varconvex.banach import (
    PNormSpace, check_parallelogram_law, duality_continuity_modulus, duality_map,
    duality_map_inverse, estimate_moduli, norm, norm_sq,
)

ps = st.sampled_from([1.2, 1.5, 2.0, 3.0, 4.5])
# keep entries away from the range where |x|^p underflows in the numpy oracle
entries = st.floats(-50, 50, allow_nan=False).filter(lambda v: v == 0 or abs(v) > 1e-80)
vectors = arrays(np.float64, st.integers(1, 5), elements=entries)


def oracle_norm(x, p):
    return float(np.linalg.norm(x, ord=p))


def oracle_gradient_half_norm_sq(x, p, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (0.5 * oracle_norm(x + e, p) ** 2 - 0.5 * oracle_norm(x - e, p) ** 2) / (2 * h)
    return g


class TestSpace:
    @pytest.mark.parametrize("p", [1.0, 0.5, np.inf, np.nan])
    def test_invalid_p(self, p):
        with pytest.raises(ValueError):
            PNormSpace(2, p)

    def test_conjugate(self):
        assert PNormSpace(3, 1.5).q == pytest.approx(3.0)
        assert PNormSpace(3, 2.0).is_hilbert

    @given(ps, vectors)
    def test_norm_matches_numpy(self, p, x):
        assert float(norm(PNormSpace(len(x), p), x)) == pytest.approx(oracle_norm(x, p), rel=1e-12, abs=1e-300)

    def test_norm_avoids_overflow(self):
        x = np.array([1e300, 1e300])
        assert float(norm(PNormSpace(2, 3.0), x)) == pytest.approx(2 ** (1 / 3) * 1e300)


class TestDualityMap:
    @given(ps, vectors)
    def test_identities(self, p, x):
        sp = PNormSpace(len(x), p)
        j = duality_map(sp, x)
        nx = float(norm(sp, x))
        assert float(np.dot(j, x)) == pytest.approx(nx**2, rel=1e-12, abs=1e-12)
        assert float(norm(sp.dual(), j)) == pytest.approx(nx, rel=1e-12, abs=1e-12)

    @given(ps, vectors)
    def test_round_trip(self, p, x):
        sp = PNormSpace(len(x), p)
        back = duality_map_inverse(sp, duality_map(sp, x))
        assert np.allclose(back, x, rtol=1e-10, atol=1e-10)

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_is_gradient_of_half_norm_squared(self, p):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.uniform(-2, 2, 3)
            fd = oracle_gradient_half_norm_sq(x, p)
            assert np.allclose(duality_map(PNormSpace(3, p), x), fd, atol=1e-6)

    def test_hilbert_identity_map(self):
        x = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(duality_map(PNormSpace(3, 2.0), x), x)

    def test_zero(self):
        assert np.array_equal(duality_map(PNormSpace(2, 1.5), np.zeros(2)), np.zeros(2))

    def test_batched_rows(self):
        X = np.array([[1.0, 2.0], [3.0, -1.0]])
        sp = PNormSpace(2, 3.0)
        rows = np.vstack([duality_map(sp, x) for x in X])
        assert np.allclose(duality_map(sp, X), rows)

    @given(ps, vectors)
    def test_norm_sq_scales_quadratically(self, p, x):
        sp = PNormSpace(len(x), p)
        assert float(norm_sq(sp, 3.0 * x)) == pytest.approx(9.0 * float(norm_sq(sp, x)), rel=1e-12, abs=1e-12)


class TestModuli:
    def test_hilbert_closed_form(self):
        # unit-ball midpoints in a Hilbert space: 1 - sqrt(1 - t^2/4)
        rep = estimate_moduli(PNormSpace(2, 2.0), t_values=[1.0, 2.0], s_values=[0.5])
        conv = dict(rep.sampled_modulus_convexity)
        assert conv[1.0] == pytest.approx(1 - np.sqrt(1 - 0.25), abs=1e-6)
        assert conv[2.0] == pytest.approx(1.0, abs=1e-6)
        smooth = dict(rep.sampled_modulus_smoothness)
        assert smooth[0.5] == pytest.approx(np.sqrt(1.25) - 1, abs=1e-3)

    def test_p_norm_lower_bound(self):
        # known lower bound for 1 < p <= 2: modulus >= (p - 1) t^2 / 8
        p = 1.5
        rep = estimate_moduli(PNormSpace(2, p), samples=300)
        for t, v in rep.sampled_modulus_convexity:
            assert v >= (p - 1) * t * t / 8 - 1e-6

    def test_constants_bracket_hilbert(self):
        rep = estimate_moduli(PNormSpace(3, 2.0))
        assert rep.lwp_constant == pytest.approx(1.0, abs=1e-12)
        assert rep.uwp_constant == pytest.approx(1.0, abs=1e-12)

    def test_requires_dim_two(self):
        with pytest.raises(ValueError):
            estimate_moduli(PNormSpace(1, 1.5))
        with pytest.raises(ValueError):
            estimate_moduli(PNormSpace(2, 1.5), samples=10)

    def test_deterministic(self):
        a = estimate_moduli(PNormSpace(2, 3.0), seed=7).to_json()
        b = estimate_moduli(PNormSpace(2, 3.0), seed=7).to_json()
        assert a == b


class TestParallelogram:
    def test_lower_law_sharp_constant(self):
        assert check_parallelogram_law(PNormSpace(2, 1.5), 0.5).holds

    def test_lower_law_too_large_constant(self):
        cert = check_parallelogram_law(PNormSpace(2, 1.5), 2.0)
        assert cert.fails
        w = cert.witness
        x, y = np.asarray(w["x"]), np.asarray(w["y"])
        lhs = oracle_norm(x + y, 1.5) ** 2 + 2.0 * oracle_norm(x - y, 1.5) ** 2
        rhs = 2 * (oracle_norm(x, 1.5) ** 2 + oracle_norm(y, 1.5) ** 2)
        assert lhs > rhs

    def test_hilbert_equality(self):
        for lower in (True, False):
            cert = check_parallelogram_law(PNormSpace(3, 2.0), 1.0, lower=lower)
            assert cert.holds
            assert cert.params["max_abs_gap"] <= 1e-12 * 100

    def test_upper_law_for_large_p(self):
        sp = PNormSpace(2, 3.0)
        assert check_parallelogram_law(sp, 2.0, lower=False).holds
        assert check_parallelogram_law(sp, 0.5, lower=False).fails
        assert check_parallelogram_law(sp, 1.0, lower=True).fails

    def test_witness_is_lexicographically_first(self):
        cert = check_parallelogram_law(PNormSpace(2, 1.5), 2.0, trials=100)
        assert cert.witness["kind"] == "parallelogram"


def test_duality_continuity_modulus_shrinks():
    out = duality_continuity_modulus(PNormSpace(2, 1.5), deltas=[1e-1, 1e-3], samples=200, seed=0)
    vals = [v for _, v in out] if isinstance(out, list) else list(out.values())
    assert vals[1] <= vals[0]
