import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from varconvex.core import Box, TestFunction
from varconvex.epi import (
    GENERATORS, FunctionSequence, argmin_convergence_check, contained, epi_converges,
    epigraph_limits_check, inf_upper_semicontinuity_check, load_manifest, run_suite_entry,
    sequence_from_manifest, set_inner_limit, set_outer_limit, shipped_manifests, tail_indices,
)

BOX = Box([-2.0], [2.0], 401)


def quad(shift=0.0, center=0.0):
    return TestFunction(f"q{shift}", 1, lambda X: 0.5 * (X[:, 0] - center) ** 2 + shift)


def seq_of(gen, k_max=60, box=BOX, tol=1e-6):
    return FunctionSequence("test", gen, k_max, box, None, tol)


class TestSetLimits:
    def test_tail(self):
        assert tail_indices(10) == [5, 6, 7, 8, 9, 10]

    def test_alternating_sets(self):
        sets = [np.array([[1.0]]) if k % 2 else np.array([[-1.0]]) for k in range(1, 41)]
        outer = set_outer_limit(sets, 1e-6)
        inner = set_inner_limit(sets, 1e-6)
        assert sorted(outer[:, 0].tolist()) == [-1.0, 1.0]
        assert len(inner) == 0

    def test_converging_points(self):
        sets = [np.array([[1.0 / k], [5.0]]) for k in range(1, 201)]
        inner = set_inner_limit(sets, 0.02)
        assert contained(np.array([[0.0], [5.0]]), inner, 0.02)

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
    def test_constant_sequence_limits_equal_the_set(self, pts):
        s = np.array(pts)[:, None]
        sets = [s] * 12
        inner = set_inner_limit(sets, 1e-9)
        outer = set_outer_limit(sets, 1e-9)
        assert contained(s, inner, 1e-9) and contained(inner, s, 1e-9)
        assert contained(inner, outer, 1e-9)

    @given(st.integers(4, 40), st.integers(0, 10**6))
    def test_inner_inside_outer(self, k_max, seed):
        rng = np.random.default_rng(seed)
        sets = [rng.integers(-3, 4, (3, 1)).astype(float) for _ in range(k_max)]
        assert contained(set_inner_limit(sets, 0.1), set_outer_limit(sets, 0.1), 0.1)

    def test_contained_edge_cases(self):
        assert contained(np.zeros((0, 1)), np.zeros((0, 1)), 1.0)
        assert not contained(np.zeros((1, 1)), np.zeros((0, 1)), 1.0)


class TestEpiConvergence:
    def test_constant(self):
        s = seq_of(lambda k: quad())
        assert epi_converges(s, quad(), BOX).holds

    def test_vanishing_shift(self):
        s = seq_of(lambda k: quad(1.0 / k), k_max=400, tol=0.01)
        assert epi_converges(s, quad(), BOX).holds

    def test_wrong_limit_from_above(self):
        s = seq_of(lambda k: quad())
        cert = epi_converges(s, quad(1.0), BOX)
        assert cert.fails

    def test_wrong_limit_from_below(self):
        s = seq_of(lambda k: quad())
        cert = epi_converges(s, quad(-1.0), BOX)
        assert cert.fails

    def test_usc_and_argmin(self):
        s = seq_of(lambda k: quad(0.0, 1.0 / k), k_max=400, tol=0.05)
        epi = epi_converges(s, quad(), BOX)
        assert epi.holds
        assert inf_upper_semicontinuity_check(s, quad(), BOX, epi_certificate=epi).holds
        assert argmin_convergence_check(s, quad(), BOX).holds

    def test_argmin_away_from_limit_argmin(self):
        s = seq_of(lambda k: quad(0.0, 1.0))
        assert argmin_convergence_check(s, quad(), BOX).fails

    def test_epigraph_route_agrees(self):
        s = seq_of(lambda k: quad())
        assert epigraph_limits_check(s, quad(), Box([-1.0], [1.0], 41)).holds
        assert epigraph_limits_check(s, quad(0.5), Box([-1.0], [1.0], 41)).fails


class TestManifests:
    def test_six_shipped(self):
        names = {p.stem for p in shipped_manifests()}
        assert names == set(GENERATORS)

    @pytest.mark.parametrize("path", shipped_manifests(), ids=lambda p: p.stem)
    def test_manifest_holds(self, path):
        seq, limit = load_manifest(path)
        entry = run_suite_entry(seq, limit)
        assert entry["all_hold"], {k: v.verdict for k, v in entry.items() if hasattr(v, "verdict")}

    def test_oscillating_inner_strictly_inside_outer(self):
        seq, limit = load_manifest([p for p in shipped_manifests() if p.stem == "oscillating_wells"][0])
        arg = argmin_convergence_check(seq, limit, seq.box)
        outer = np.asarray(arg.params["outer_limit"])
        inner = np.asarray(arg.params["inner_limit"])
        assert sorted(np.round(outer[:, 0], 6).tolist()) == [-1.0, 1.0]
        assert len(inner) == 0 and arg.params["inner_strictly_inside_outer"]

    def test_singleton_epigraph_route(self):
        seq, limit = load_manifest([p for p in shipped_manifests() if p.stem == "shrinking_singleton"][0])
        short = FunctionSequence(seq.name, seq.generator, 200, seq.box, limit, seq.tol)
        assert epigraph_limits_check(short, limit, seq.box).holds

    def test_unknown_generator(self):
        with pytest.raises(KeyError):
            sequence_from_manifest({"name": "x", "generator_id": "nope", "k_max": 4,
                                    "box": {"lo": [0], "hi": [1], "points_per_axis": 5}})

    def test_manifest_format(self):
        for p in shipped_manifests():
            data = json.loads(p.read_text())
            assert set(data) >= {"name", "generator_id", "k_max", "box", "tol"}
