"""Ground-truth solvers run outside the simulator on graph snapshots.

* :func:`exact_densest` - globally optimal density via binary search over
  guesses with denominator ``n*(n-1)`` and one certifying min-cut: since any
  two distinct subgraph densities differ by at least ``1/(n*(n-1))``, the
  subset extracted from the final cut is exactly optimal.  Exact rational
  output, no floating-point in the certification path.
* :func:`exact_at_least_k` - exhaustive enumeration over all subsets of size
  at least k (bounded to n <= 20, about a million subsets).
* :func:`peel_reference` - centralized, exact-arithmetic replay of the
  level-peeling recursion, sharing the protocol's binary64 threshold
  comparison so level sets match the embedded exact-mode protocol bitwise.

Results are cached on disk keyed by graph content hash.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from .errors import TooLargeForEnumeration
from .graph import DynamicGraph, induced_density
from .protocol import threshold_value

ENUMERATION_LIMIT = 20

_POPCOUNT16 = np.array([bin(i).count("1") for i in range(1 << 16)],
                       dtype=np.uint8)


def _popcount_u32(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint32)
    return (_POPCOUNT16[x & np.uint32(0xFFFF)].astype(np.int32)
            + _POPCOUNT16[x >> np.uint32(16)].astype(np.int32))


@dataclass(frozen=True)
class OracleResult:
    members: frozenset[int]
    density: Fraction
    method: str
    runtime_s: float = 0.0


def _check_min_degree(g: DynamicGraph, members: frozenset[int],
                      density: Fraction) -> None:
    # every vertex of an optimum has induced degree >= the optimal density,
    # otherwise removing it would raise the density
    for v in members:
        if Fraction(len(g.adj[v] & members)) < density:
            raise AssertionError(
                f"optimal-degree property violated at node {v}")


def graph_content_hash(g: DynamicGraph) -> str:
    h = hashlib.sha256()
    h.update(str(g.node_count).encode())
    for u, v in g.edges():
        h.update(f"{u},{v};".encode())
    return h.hexdigest()


# -- exact densest via max-flow -------------------------------------------------


class _FlowTester:
    """Min-cut tests for "exists S with q0*|E(S)| - t*|S| > 0".

    Network: source -> edge-node (cap q0), edge-node -> endpoints (cap inf),
    vertex -> sink (cap t).  Max closure value is m*q0 - mincut.  The arc
    structure is fixed across the binary search; only sink caps move.
    """

    def __init__(self, n_nodes: int, edges: list[tuple[int, int]], q0: int):
        m = len(edges)
        self.n_nodes = n_nodes
        self.m = m
        big = m * q0 + 1
        self.src = 0
        self.sink = 1 + m + n_nodes
        earr = np.asarray(edges, dtype=np.int64)
        heads = np.concatenate([np.zeros(m, np.int64),
                                1 + np.arange(m),
                                1 + np.arange(m),
                                1 + m + np.arange(n_nodes)])
        tails = np.concatenate([1 + np.arange(m),
                                1 + m + earr[:, 0],
                                1 + m + earr[:, 1],
                                np.full(n_nodes, self.sink, np.int64)])
        caps = np.concatenate([np.full(m, q0, np.int64),
                               np.full(2 * m, big, np.int64),
                               np.zeros(n_nodes, np.int64)])
        rows = np.concatenate([heads, tails])
        cols = np.concatenate([tails, heads])
        base = np.concatenate([caps, np.zeros_like(caps)])
        order = np.lexsort((cols, rows))
        self._rows, self._cols = rows[order], cols[order]
        self._caps = base[order]
        self._sink_arcs = np.nonzero((self._cols == self.sink)
                                     & (self._caps == 0))[0]
        # the zero-cap reverse arcs of sink arcs also match; separate by row
        self._sink_arcs = self._sink_arcs[
            (self._rows[self._sink_arcs] >= 1 + m)]
        self._template = csr_matrix(
            (self._caps.astype(np.int32), (self._rows, self._cols)),
            shape=(self.sink + 1, self.sink + 1))
        self._csr_order = None

    def run(self, t: int) -> tuple[int, np.ndarray]:
        graph = self._template.copy()
        # entries are sorted the same way csr stores them, so assign in place
        data = self._caps.copy()
        data[self._sink_arcs] = t
        graph.data = data.astype(np.int32)
        res = maximum_flow(graph, self.src, self.sink)
        residual = graph - res.flow
        residual.data = np.maximum(residual.data, 0)
        residual.eliminate_zeros()
        order = breadth_first_order(residual, self.src, directed=True,
                                    return_predecessors=False)
        reach = np.zeros(self.sink + 1, dtype=bool)
        reach[order] = True
        members = np.nonzero(reach[1 + self.m: 1 + self.m + self.n_nodes])[0]
        return int(res.flow_value), members


def exact_densest(g: DynamicGraph) -> OracleResult:
    """Maximum-density subset with exact rational certification."""
    t0 = time.perf_counter()
    n, m = g.node_count, g.edge_count
    if m == 0:
        return OracleResult(frozenset({0}), Fraction(0), "maxflow",
                            time.perf_counter() - t0)
    q0 = n * (n - 1) if n > 1 else 1
    tester = _FlowTester(n, g.edges(), q0)
    lo, hi = 0, m * q0
    members_lo: np.ndarray | None = None
    while hi - lo > 1:
        mid = (lo + hi) // 2
        flow, members = tester.run(mid)
        if m * q0 - flow > 0:
            lo, members_lo = mid, members
        else:
            hi = mid
    if members_lo is None:  # lo stayed 0; rerun for the certificate
        _, members_lo = tester.run(lo)
    members = frozenset(int(v) for v in members_lo)
    if not members:
        raise AssertionError("max-flow certificate produced an empty set")
    density = induced_density(g, members).density
    _check_min_degree(g, members, density)
    return OracleResult(members, density, "maxflow", time.perf_counter() - t0)


# -- exhaustive enumeration ------------------------------------------------------


def _subset_edge_counts(g: DynamicGraph) -> np.ndarray:
    """E[mask] = induced edge count for every subset mask (vectorized DP)."""
    n = g.node_count
    adj_masks = [sum(1 << w for w in g.adj[v]) for v in range(n)]
    counts = np.zeros(1 << n, dtype=np.int32)
    # descending v: E[{v} | H] = E[H] + |adj(v) & H| needs H's count first,
    # and H only has bits above v
    for v in range(n - 1, -1, -1):
        high = np.arange(1 << (n - v - 1), dtype=np.uint32) << np.uint32(v + 1)
        sub = high | np.uint32(1 << v)
        counts[sub] = counts[high] + _popcount_u32(
            np.uint32(adj_masks[v]) & high)
    return counts


def _lexmin_optimal_mask(optimal: np.ndarray, n: int) -> int:
    """Lexicographically smallest sorted-vertex-tuple among optimal masks."""
    prefix = 0
    start = 0
    while True:
        if prefix and optimal[prefix]:
            return prefix  # a set is lex-smaller than any of its extensions
        for v in range(start, n):
            cand = prefix | (1 << v)
            block = 1 << (v + 1)
            if optimal[cand::block].any():
                prefix, start = cand, v + 1
                break
        else:
            raise AssertionError("no optimal mask reachable")


def exact_at_least_k(g: DynamicGraph, k: int,
                     limit: int = ENUMERATION_LIMIT) -> OracleResult:
    """Densest subset of size >= k by exhaustive enumeration (n <= limit)."""
    t0 = time.perf_counter()
    n = g.node_count
    if n > limit:
        raise TooLargeForEnumeration(f"n={n} exceeds enumeration limit {limit}")
    if k > n:
        raise ValueError(f"k={k} exceeds node count {n}")
    k_eff = max(k, 1)
    counts = _subset_edge_counts(g)
    sizes = _popcount_u32(np.arange(1 << n, dtype=np.uint32))
    valid = sizes >= k_eff
    # for n <= 20 all candidate ratios are exactly ordered in binary64
    dens = np.where(valid, counts / np.maximum(sizes, 1), -1.0)
    best = float(dens.max())
    optimal = valid & (dens == best)
    mask = _lexmin_optimal_mask(optimal, n)
    members = frozenset(v for v in range(n) if mask >> v & 1)
    density = Fraction(int(counts[mask]), len(members))
    if k <= 1:
        _check_min_degree(g, members, density)
    return OracleResult(members, density, "enumeration",
                        time.perf_counter() - t0)


def brute_force_densest(g: DynamicGraph,
                        limit: int = ENUMERATION_LIMIT) -> OracleResult:
    return exact_at_least_k(g, 0, limit=limit)


# -- centralized peeling reference ----------------------------------------------


@dataclass(frozen=True)
class PeelResult:
    levels: tuple[frozenset[int], ...]
    records: tuple[tuple[int, int, float], ...]  # (|V_j|, |E_j|, ratio)
    closed_by: str

    def best_level(self) -> int:
        best, best_val = 0, -1.0
        for i, (nj, mj, ratio) in enumerate(self.records):
            if ratio > best_val:
                best, best_val = i, ratio
        return best

    def as_oracle_result(self, g: DynamicGraph) -> OracleResult:
        i = self.best_level()
        members = self.levels[i]
        return OracleResult(members, induced_density(g, members).density,
                            "peeling-reference")


def peel_reference(g: DynamicGraph, threshold_factor: float,
                   p_cap: int | None = None) -> PeelResult:
    """Exact-count replay of the level recursion with the shared binary64
    threshold comparison; mirrors the embedded protocol's closure rules
    (empty level, fixed point, level cap)."""
    members = frozenset(range(g.node_count))
    levels: list[frozenset[int]] = []
    records: list[tuple[int, int, float]] = []
    cap = p_cap if p_cap is not None else g.node_count + 2
    while True:
        nj = len(members)
        if nj == 0:
            return PeelResult(tuple(levels), tuple(records), "empty")
        mj = sum(len(g.adj[u] & members) for u in members) // 2
        ratio = float(mj) / float(nj)
        levels.append(members)
        records.append((nj, mj, ratio))
        if len(records) >= cap:
            return PeelResult(tuple(levels), tuple(records), "cap")
        thr = threshold_value(ratio, threshold_factor)
        survivors = frozenset(u for u in members
                              if len(g.adj[u] & members) >= thr)
        if survivors == members:
            return PeelResult(tuple(levels), tuple(records), "fixed-point")
        members = survivors


# -- at-least-k bounds beyond enumeration scale ----------------------------------


def greedy_at_least_k_witness(g: DynamicGraph, k: int,
                              seed_set: frozenset[int] | None = None
                              ) -> tuple[frozenset[int], Fraction]:
    """Feasible size->=k set built greedily; its density lower-bounds the
    at-least-k optimum."""
    current = set(seed_set) if seed_set else set(exact_densest(g).members)
    outside = sorted(set(range(g.node_count)) - current)
    while len(current) < k:
        best = max(outside, key=lambda v: (len(g.adj[v] & current), -v))
        current.add(best)
        outside.remove(best)
    dens = induced_density(g, current).density
    return frozenset(current), dens


def at_least_k_bounds(g: DynamicGraph, k: int,
                      unconstrained: OracleResult | None = None
                      ) -> tuple[Fraction, Fraction, frozenset[int]]:
    """(lower, upper) bounds on the at-least-k optimal density plus the
    witness set achieving the lower bound.  Exact when n <= 20."""
    if g.node_count <= ENUMERATION_LIMIT:
        res = exact_at_least_k(g, k)
        return res.density, res.density, res.members
    base = unconstrained if unconstrained is not None else exact_densest(g)
    witness, lower = greedy_at_least_k_witness(g, k, base.members)
    upper = min(base.density, Fraction(g.edge_count, max(k, 1)))
    if lower > upper:  # the witness is better than the naive cap
        upper = lower
    return lower, upper, witness


# -- disk cache -------------------------------------------------------------------


class OracleCache:
    """Content-addressed cache of oracle answers (memory plus optional dir)."""

    def __init__(self, directory: str | None = None):
        self.directory = directory
        self._mem: dict[str, OracleResult] = {}
        if directory:
            os.makedirs(directory, exist_ok=True)

    def _key(self, kind: str, g: DynamicGraph, **params) -> str:
        extra = json.dumps(params, sort_keys=True)
        return hashlib.sha256(
            f"{kind}|{graph_content_hash(g)}|{extra}".encode()).hexdigest()

    def exact_densest(self, g: DynamicGraph) -> OracleResult:
        return self._get("densest", g, lambda: exact_densest(g))

    def exact_at_least_k(self, g: DynamicGraph, k: int) -> OracleResult:
        return self._get("atleastk", g, lambda: exact_at_least_k(g, k), k=k)

    def _get(self, kind: str, g: DynamicGraph, compute, **params) -> OracleResult:
        key = self._key(kind, g, **params)
        if key in self._mem:
            return self._mem[key]
        if self.directory:
            path = os.path.join(self.directory, key + ".json")
            if os.path.exists(path):
                with open(path, "r", encoding="utf-8") as fh:
                    raw = json.load(fh)
                res = OracleResult(frozenset(raw["members"]),
                                   Fraction(raw["num"], raw["den"]),
                                   raw["method"])
                self._mem[key] = res
                return res
        res = compute()
        self._mem[key] = res
        if self.directory:
            path = os.path.join(self.directory, key + ".json")
            with open(path, "w", encoding="utf-8") as fh:
                json.dump({"members": sorted(res.members),
                           "num": res.density.numerator,
                           "den": res.density.denominator,
                           "method": res.method}, fh)
        return res
