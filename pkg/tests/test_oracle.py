from fractions import Fraction

import numpy as np
import pytest

from densetrack.errors import TooLargeForEnumeration
from densetrack.graph import DynamicGraph, induced_density
from densetrack.oracle import (OracleCache, at_least_k_bounds,
                               brute_force_densest, exact_at_least_k,
                               exact_densest, graph_content_hash,
                               greedy_at_least_k_witness, peel_reference)


def complete(n):
    return DynamicGraph.from_edges(n, [(i, j) for i in range(n)
                                       for j in range(i + 1, n)])


def k4_plus_pendant():
    return DynamicGraph.from_edges(5, [(i, j) for i in range(4)
                                       for j in range(i + 1, 4)] + [(3, 4)])


def random_graph(rng, n, p):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)
             if rng.random() < p]
    return DynamicGraph.from_edges(n, edges)


class TestExactDensest:
    def test_k5_whole_graph(self):
        res = exact_densest(complete(5))
        assert res.density == Fraction(2) and res.members == frozenset(range(5))

    def test_k4_plus_pendant(self):
        res = exact_densest(k4_plus_pendant())
        assert res.density == Fraction(3, 2)
        assert res.members == frozenset(range(4))

    def test_two_triangles_with_bridge(self):
        # the whole graph (7 edges over 6 nodes) beats either triangle
        g = DynamicGraph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4),
                                        (4, 5), (3, 5), (2, 3)])
        res = exact_densest(g)
        assert res.density == Fraction(7, 6)
        assert brute_force_densest(g).density == Fraction(7, 6)

    def test_edgeless(self):
        res = exact_densest(DynamicGraph(3))
        assert res.density == 0 and res.members == frozenset({0})

    def test_single_node(self):
        res = exact_densest(DynamicGraph(1))
        assert res.density == 0


class TestAtLeastK:
    def test_k5_takes_whole_graph(self):
        res = exact_at_least_k(k4_plus_pendant(), 5)
        assert res.density == Fraction(7, 5)
        assert res.members == frozenset(range(5))

    def test_k4_takes_clique(self):
        res = exact_at_least_k(k4_plus_pendant(), 4)
        assert res.density == Fraction(3, 2)

    def test_k1_equals_unconstrained(self):
        rng = np.random.default_rng(5)
        for _ in range(15):
            g = random_graph(rng, int(rng.integers(3, 11)), 0.4)
            assert exact_at_least_k(g, 1).density == exact_densest(g).density

    def test_density_non_increasing_in_k(self):
        rng = np.random.default_rng(6)
        g = random_graph(rng, 10, 0.4)
        dens = [exact_at_least_k(g, k).density for k in range(1, 11)]
        assert all(a >= b for a, b in zip(dens, dens[1:]))

    def test_enumeration_limit(self):
        with pytest.raises(TooLargeForEnumeration):
            exact_at_least_k(DynamicGraph(25), 3)

    def test_lexicographically_smallest_tie(self):
        # two disjoint triangles: {0,1,2} and {3,4,5} tie; lexicographic
        # order picks the lower-id one
        g = DynamicGraph.from_edges(6, [(0, 1), (1, 2), (0, 2),
                                        (3, 4), (4, 5), (3, 5)])
        res = brute_force_densest(g)
        assert res.members == frozenset({0, 1, 2})


class TestCrossValidation:
    def test_maxflow_matches_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            n = int(rng.integers(4, 14))
            g = random_graph(rng, n, float(rng.uniform(0.1, 0.6)))
            assert exact_densest(g).density == brute_force_densest(g).density

    def test_no_subset_beats_optimum(self):
        rng = np.random.default_rng(8)
        g = random_graph(rng, 14, 0.3)
        best = exact_densest(g).density
        for _ in range(10000):
            size = int(rng.integers(1, 15))
            members = rng.choice(14, size=size, replace=False)
            assert induced_density(g, members).density <= best

    def test_optimal_degree_property(self):
        # every optimum member keeps induced degree >= the optimal density
        rng = np.random.default_rng(9)
        for _ in range(10):
            g = random_graph(rng, 12, 0.35)
            res = exact_densest(g)
            for v in res.members:
                deg = len(g.adj[v] & res.members)
                assert Fraction(deg) >= res.density


class TestPeelReference:
    def test_triangle_plus_pendant_levels(self):
        g = DynamicGraph.from_edges(4, [(0, 1), (1, 2), (0, 2), (2, 3)])
        res = peel_reference(g, 1.01)
        assert [sorted(l) for l in res.levels] == [[0, 1, 2, 3], [0, 1, 2]]

    def test_star_fixed_point(self):
        g = DynamicGraph.from_edges(6, [(0, i) for i in range(1, 6)])
        res = peel_reference(g, 1.01)
        assert res.levels == (frozenset(range(6)),)
        assert res.closed_by == "fixed-point"

    def test_k5_survives_any_factor_up_to_two(self):
        g = complete(5)
        for factor in (1.01, 1.5, 2.0):
            res = peel_reference(g, factor)
            assert res.levels[0] == frozenset(range(5))
            assert res.closed_by == "fixed-point"

    def test_best_level_result(self):
        g = k4_plus_pendant()
        res = peel_reference(g, 1.02)
        best = res.as_oracle_result(g)
        assert best.density == Fraction(3, 2)


class TestBounds:
    def test_witness_reaches_size(self):
        rng = np.random.default_rng(10)
        g = random_graph(rng, 30, 0.2)
        witness, dens = greedy_at_least_k_witness(g, 25)
        assert len(witness) >= 25
        assert dens == induced_density(g, witness).density

    def test_bounds_bracket_enumeration(self):
        rng = np.random.default_rng(11)
        for _ in range(8):
            g = random_graph(rng, 12, 0.4)
            for k in (3, 6, 10):
                lower, upper, _ = at_least_k_bounds(g, k)
                exact = exact_at_least_k(g, k).density
                assert lower == upper == exact  # exact at this scale

    def test_bounds_sound_beyond_enumeration(self):
        rng = np.random.default_rng(12)
        g = random_graph(rng, 40, 0.15)
        lower, upper, witness = at_least_k_bounds(g, 30)
        assert lower <= upper
        assert len(witness) >= 30
        assert induced_density(g, witness).density == lower


class TestCache:
    def test_disk_roundtrip(self, tmp_path):
        g = k4_plus_pendant()
        cache = OracleCache(str(tmp_path))
        first = cache.exact_densest(g)
        fresh = OracleCache(str(tmp_path))  # cold memory, warm disk
        again = fresh.exact_densest(g)
        assert first.density == again.density
        assert first.members == again.members

    def test_content_addressing(self):
        g1 = k4_plus_pendant()
        g2 = k4_plus_pendant()
        assert graph_content_hash(g1) == graph_content_hash(g2)
        g2.apply_churn([])  # time changes, content does not
        assert graph_content_hash(g1) == graph_content_hash(g2)
