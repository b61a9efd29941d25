"""Distributed cardinality estimators over flood-merge tuples.

Three estimators, all agreeing network-wide after D merge rounds:

* **coarse node count** - every member draws a tuple of geometric toss
  counters (fair coin until heads, capped at 64 tosses); tuples are
  max-merged while flooding and every node outputs the median of ``2**x``
  over the merged tuple.  Used as a cheap upper-bound stage.  Note the
  output lives on the power-of-two grid: the advertised two-sided
  ``[n/2, 2n]`` window only holds reliably when n sits near a power of
  two, while the upper-bound role (``2 * coarse >= n``) holds everywhere.
* **fine node count** - members draw exponential(1) tuples of length
  ``l = ceil(27*(2+2c)*ln(N)/eps^2)`` (N an upper bound on the subset size,
  natural log, c exposed in config); tuples are min-merged and each node
  outputs ``l / sum(tuple)``.
* **edge count** - each member simulates ``d_u`` copies (its degree inside
  the subset), merging the copies locally before broadcasting, so message
  sizes do not grow; the final estimate is halved because both endpoints
  report each edge.

The empty subset is defined to estimate 0 in every mode (all-identity merges
stay at the identity), which the maintenance loop relies on.

``exact`` mode swaps the tuples for idempotent set unions of (id, degree)
pairs - same schedule, exact outputs - to isolate protocol logic from
estimator noise in tests.  ``strict`` mode serializes one tuple coordinate
per round (l*D rounds instead of D) for literal per-edge bandwidth limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import DynamicGraph
from .netsim import (CoordPart, DegreesPart, ExpTuplePart, GeoTuplePart,
                     IdSetPart, MessagePart, StepContext, World, id_bit_width)

GEO_TOSS_CAP = 64


def coarse_tuple_len(delta_fail: float) -> int:
    """Tuple length for the coarse stage at failure probability delta."""
    if not (0 < delta_fail < 1):
        raise ValueError("delta_fail must be in (0,1)")
    return max(1, math.ceil(65.0 * math.log(1.0 / delta_fail)))


def fine_tuple_len(upper_bound: float, epsilon: float, c: float = 1.0) -> int:
    """Tuple length for the fine stage given an upper bound on |V'|."""
    if epsilon <= 0 or epsilon > 1:
        raise ValueError("epsilon must be in (0,1]")
    n_cap = max(float(upper_bound), 2.0)
    return max(1, math.ceil(27.0 * (2.0 + 2.0 * c) * math.log(n_cap) / epsilon ** 2))


# -- low-level samplers (single source of randomness semantics) ----------------


def geometric_tosses(rng: np.random.Generator, size) -> tuple[np.ndarray, int]:
    """Coin-toss counters: fair Bernoulli until heads, head included, capped
    at 64 tosses.  Returns (uint8 array, number of truncated draws)."""
    draws = rng.geometric(0.5, size=size)
    truncated = int((draws > GEO_TOSS_CAP).sum())
    return np.minimum(draws, GEO_TOSS_CAP).astype(np.uint8), truncated


def exponential_draws(rng: np.random.Generator, size) -> np.ndarray:
    """Rate-1 exponentials via inverse CDF -ln(U), U uniform in (0,1]."""
    u = rng.random(size=size)
    out = -np.log1p(-u)
    if out.size:
        np.copyto(out, 1e-300, where=(out == 0.0))
    return out


def geometric_max_tosses(rng: np.random.Generator, copies: int,
                         size) -> tuple[np.ndarray, int]:
    """Max of ``copies`` independent toss counters, sampled directly.

    The max of c iid geometric(1/2) variables has CDF ``(1 - 2^-k)^c``;
    inverse-CDF sampling of that law is an exact implementation of
    draw-c-tuples-then-merge, at 1/c the draw count.  Used when one node
    simulates its degree's worth of virtual members.
    """
    if copies <= 1:
        return geometric_tosses(rng, size)
    ks = np.arange(1, GEO_TOSS_CAP + 1, dtype=np.float64)
    cdf = np.power(1.0 - np.exp2(-ks), copies)
    u = rng.random(size=size)
    truncated = int((u > cdf[-1]).sum())
    idx = np.searchsorted(cdf, u, side="left")
    return np.minimum(idx + 1, GEO_TOSS_CAP).astype(np.uint8), truncated


def exponential_min_draws(rng: np.random.Generator, copies: int,
                          size) -> np.ndarray:
    """Min of ``copies`` iid rate-1 exponentials: exactly Exp(copies)."""
    if copies <= 1:
        return exponential_draws(rng, size)
    return exponential_draws(rng, size) / copies


def finalize_coarse(values: np.ndarray) -> float:
    """Median of 2**x over a merged toss-count tuple; 0 for the identity."""
    if not values.any():
        return 0.0
    return float(np.median(np.exp2(values.astype(np.float64))))


def finalize_fine(values: np.ndarray | None) -> float:
    """l / sum over a merged exponential tuple; 0 when nothing merged."""
    if values is None:
        return 0.0
    return float(values.size / values.sum())


# -- merge stages ---------------------------------------------------------------


@dataclass
class MergeStage:
    """One flood-merge accumulator driven by a node for D (or l*D) rounds.

    ``kind`` selects the algebra: geo (max), exp (min), ids (union),
    degs (entrywise max with -1 as unknown).
    """

    tag: str
    kind: str
    diameter: int
    acc: np.ndarray | None = None
    has_data: bool = False
    strict: bool = False
    length: int = 0  # tuple length (geo/exp)
    node_count: int = 0  # ids/degs metering
    emitted: int = 0

    def rounds(self) -> int:
        if self.strict and self.kind in ("geo", "exp"):
            return self.length * self.diameter
        return self.diameter

    def absorb(self, part: MessagePart) -> None:
        if isinstance(part, CoordPart):
            idx = part.index
            if self.kind == "geo":
                v = np.uint8(part.value)
                if self.acc is None:
                    self.acc = np.zeros(self.length, np.uint8)
                if v > self.acc[idx]:
                    self.acc[idx] = v
            else:
                if self.acc is None:
                    self.acc = np.full(self.length, np.inf)
                if part.value < self.acc[idx]:
                    self.acc[idx] = part.value
            self.has_data = True
            return
        if self.kind == "geo":
            assert isinstance(part, GeoTuplePart)
            if self.acc is None:
                self.acc = part.values.copy()
            else:
                np.maximum(self.acc, part.values, out=self.acc)
            self.has_data = True
        elif self.kind == "exp":
            assert isinstance(part, ExpTuplePart)
            if self.acc is None:
                self.acc = part.values.copy()
            else:
                np.minimum(self.acc, part.values, out=self.acc)
            self.has_data = True
        elif self.kind == "ids":
            assert isinstance(part, IdSetPart)
            if self.acc is None:
                self.acc = part.packed.copy()
            else:
                np.bitwise_or(self.acc, part.packed, out=self.acc)
            self.has_data = True
        else:
            assert isinstance(part, DegreesPart)
            if self.acc is None:
                self.acc = part.degrees.copy()
            else:
                np.maximum(self.acc, part.degrees, out=self.acc)
            self.has_data = True

    def emit(self) -> MessagePart | None:
        pos, self.emitted = self.emitted, self.emitted + 1
        if not self.has_data:
            return None
        if self.kind == "geo":
            if self.strict:
                return CoordPart(self.tag, "geo", pos // self.diameter,
                                 float(self.acc[pos // self.diameter]))
            return GeoTuplePart(self.tag, self.acc)
        if self.kind == "exp":
            if self.strict:
                return CoordPart(self.tag, "exp", pos // self.diameter,
                                 float(self.acc[pos // self.diameter]))
            return ExpTuplePart(self.tag, self.acc)
        if self.kind == "ids":
            count = int(np.bitwise_count(self.acc).sum()) if hasattr(np, "bitwise_count") \
                else int(sum(bin(int(w)).count("1") for w in self.acc))
            return IdSetPart(self.tag, self.acc, count,
                             id_bit_width(self.node_count))
        return DegreesPart(self.tag, self.acc, id_bit_width(self.node_count))


def geo_stage(tag: str, diameter: int, length: int, member: bool,
              rng: np.random.Generator, copies: int = 1,
              strict: bool = False) -> tuple[MergeStage, int]:
    """Coarse stage for one node; ``copies`` simulated members merge locally."""
    st = MergeStage(tag, "geo", diameter, length=length, strict=strict)
    truncated = 0
    if member and copies > 0:
        st.acc, truncated = geometric_max_tosses(rng, copies, length)
        st.has_data = True
    return st, truncated


def exp_stage(tag: str, diameter: int, length: int, member: bool,
              rng: np.random.Generator, copies: int = 1,
              strict: bool = False) -> MergeStage:
    st = MergeStage(tag, "exp", diameter, length=length, strict=strict)
    if member and copies > 0:
        st.acc = exponential_min_draws(rng, copies, length)
        st.has_data = True
    return st


def ids_stage(tag: str, diameter: int, node_count: int, node_id: int,
              member: bool) -> MergeStage:
    st = MergeStage(tag, "ids", diameter, node_count=node_count)
    if member:
        packed = np.zeros((node_count + 63) // 64, np.uint64)
        packed[node_id // 64] |= np.uint64(1) << np.uint64(node_id % 64)
        st.acc = packed
        st.has_data = True
    return st


def degs_stage(tag: str, diameter: int, node_count: int, node_id: int,
               member: bool, degree: int) -> MergeStage:
    st = MergeStage(tag, "degs", diameter, node_count=node_count)
    if member:
        vec = np.full(node_count, -1, np.int32)
        vec[node_id] = degree
        st.acc = vec
        st.has_data = True
    return st


def ids_count(stage: MergeStage) -> int:
    if stage.acc is None:
        return 0
    if hasattr(np, "bitwise_count"):
        return int(np.bitwise_count(stage.acc).sum())
    return int(sum(bin(int(w)).count("1") for w in stage.acc))


def degs_sum(stage: MergeStage) -> int:
    if stage.acc is None:
        return 0
    d = stage.acc
    return int(d[d >= 0].sum())


# -- standalone counting runs (used directly by tests and the CLI) -------------


@dataclass
class CountResult:
    estimates: list[float]       # per node
    coarse: list[float]
    rounds_used: int
    world: World
    truncated_tosses: int = 0


class _CountingHandler:
    """Runs coarse (D rounds) then fine (D rounds) for one subset, or the
    exact union pipeline on the same schedule, then idles."""

    def __init__(self, node_id: int, node_count: int, member: bool,
                 diameter: int, delta_fail: float, epsilon: float,
                 c: float, copies: int, exact: bool, strict: bool):
        self.node_id = node_id
        self.node_count = node_count
        self.member = member
        self.D = diameter
        self.delta_fail = delta_fail
        self.epsilon = epsilon
        self.c = c
        self.copies = copies
        self.exact = exact
        self.strict = strict
        self.stage: MergeStage | None = None
        self.phase = "init"
        self.boundary = 0
        self.coarse_result: float | None = None
        self.estimate: float | None = None
        self.truncated = 0
        self.finished_at: int | None = None

    def step(self, ctx: StepContext) -> list[MessagePart] | None:
        if self.stage is not None:
            for msg in ctx.inbox:
                for part in msg.parts:
                    if part.tag == self.stage.tag:
                        self.stage.absorb(part)
        if self.phase == "init":
            if self.exact:
                self.stage = ids_stage("cnt.c", self.D, self.node_count,
                                       self.node_id, self.member and self.copies > 0)
            else:
                length = coarse_tuple_len(self.delta_fail)
                self.stage, self.truncated = geo_stage(
                    "cnt.c", self.D, length, self.member, ctx.rng,
                    copies=self.copies, strict=self.strict)
            self.phase = "coarse"
            self.boundary = ctx.round + self.stage.rounds()
        elif self.phase == "coarse" and ctx.round == self.boundary:
            if self.exact:
                self.coarse_result = float(ids_count(self.stage))
                # exact mode: keep unioning through the fine half of the window
            else:
                self.coarse_result = finalize_coarse(
                    self.stage.acc if self.stage.has_data
                    else np.zeros(1, np.uint8))
                length = fine_tuple_len(2.0 * self.coarse_result,
                                        self.epsilon, self.c)
                self.stage = exp_stage("cnt.f", self.D, length,
                                       self.member and self.coarse_result > 0,
                                       ctx.rng, copies=self.copies,
                                       strict=self.strict)
            self.phase = "fine"
            self.boundary = ctx.round + (self.stage.rounds() if not self.exact
                                         else self.D)
        elif self.phase == "fine" and ctx.round == self.boundary:
            if self.exact:
                self.estimate = float(ids_count(self.stage))
            elif self.coarse_result == 0:
                self.estimate = 0.0
            else:
                self.estimate = finalize_fine(
                    self.stage.acc if self.stage.has_data else None)
            self.phase = "done"
            self.finished_at = ctx.round
            self.stage = None
        if self.stage is None:
            return None
        part = self.stage.emit()
        return [part] if part else None


def run_node_count(graph: DynamicGraph, members: set[int], diameter: int,
                   *, delta_fail: float = 0.01, epsilon: float = 0.3,
                   c: float = 1.0, seed: int = 0, exact: bool = False,
                   strict: bool = False, adversary=None) -> CountResult:
    """Run the two-stage node-count pipeline embedded in the simulator.

    The combined coarse+fine window spans exactly ``2*D`` communication
    rounds (``(l_geo + l_exp) * D`` in strict mode).
    """
    handlers = [_CountingHandler(i, graph.node_count, i in members, diameter,
                                 delta_fail, epsilon, c, 1, exact, strict)
                for i in range(graph.node_count)]
    world = World(graph, handlers, seed=seed, adversary=adversary)
    start = world.clock.round
    while any(h.phase != "done" for h in handlers):
        world.run_round()
    rounds_used = handlers[0].finished_at - start
    return CountResult([h.estimate for h in handlers],
                       [h.coarse_result for h in handlers],
                       rounds_used, world,
                       sum(h.truncated for h in handlers))


def run_edge_count(graph: DynamicGraph, members: set[int], diameter: int,
                   *, delta_fail: float = 0.01, epsilon: float = 0.3,
                   c: float = 1.0, seed: int = 0, exact: bool = False,
                   strict: bool = False) -> CountResult:
    """Degree-weighted count of twice the edges inside ``members``, halved.

    Membership degrees are taken from the static topology up front (the
    embedded protocol instead piggybacks a membership round); each member
    then simulates ``d_u`` copies through the same 2D-round pipeline.
    """
    degs = {u: (len(graph.adj[u] & members) if u in members else 0)
            for u in range(graph.node_count)}
    if exact:
        handlers: list = [_ExactEdgeHandler(i, graph.node_count, i in members,
                                            degs[i], diameter)
                          for i in range(graph.node_count)]
    else:
        handlers = [_CountingHandler(i, graph.node_count, i in members, diameter,
                                     delta_fail, epsilon, c, degs[i], exact=False,
                                     strict=strict)
                    for i in range(graph.node_count)]
    world = World(graph, handlers, seed=seed)
    start = world.clock.round
    while any(h.phase != "done" for h in handlers):
        world.run_round()
    rounds_used = handlers[0].finished_at - start
    return CountResult([h.estimate / 2.0 for h in handlers],
                       [h.coarse_result for h in handlers],
                       rounds_used, world,
                       sum(getattr(h, "truncated", 0) for h in handlers))


class _ExactEdgeHandler:
    """Exact edge counting: union of (id, degree) pairs over 2D rounds."""

    def __init__(self, node_id: int, node_count: int, member: bool,
                 degree: int, diameter: int):
        self.stage = degs_stage("cnt.c", diameter, node_count, node_id, member,
                                degree)
        self.D = diameter
        self.phase = "init"
        self.boundary = 0
        self.coarse_result: float | None = None
        self.estimate: float | None = None
        self.finished_at: int | None = None

    def step(self, ctx: StepContext) -> list[MessagePart] | None:
        for msg in ctx.inbox:
            for part in msg.parts:
                if part.tag == self.stage.tag:
                    self.stage.absorb(part)
        if self.phase == "init":
            self.phase = "run"
            self.boundary = ctx.round + 2 * self.D
        elif self.phase == "run" and ctx.round == self.boundary:
            self.coarse_result = float(degs_sum(self.stage))
            self.estimate = float(degs_sum(self.stage))
            self.phase = "done"
            self.finished_at = ctx.round
            return None
        elif self.phase == "done":
            return None
        part = self.stage.emit()
        return [part] if part else None


# -- direct-path samplers (distribution oracles for Monte-Carlo tests) ---------
#
# After D merge rounds on a trace whose dynamic diameter is at most D, every
# node holds exactly the merge of all members' tuples, so the estimate's
# distribution equals "draw every member's tuple, merge, finalize".  The
# default samplers collapse the merge with the same exact identities the
# simulator uses for local degree copies (max-of-c geometrics via its closed
# CDF, min-of-c exponentials as Exp(c)); the ``*_literal`` variants draw and
# merge every tuple and exist to cross-check the collapsed law.


def sample_coarse_estimates(rng: np.random.Generator, true_count: int,
                            delta_fail: float, trials: int) -> np.ndarray:
    length = coarse_tuple_len(delta_fail)
    if true_count == 0:
        return np.zeros(trials)
    maxima, _ = geometric_max_tosses(rng, true_count, (trials, length))
    return np.median(np.exp2(maxima.astype(np.float64)), axis=1)


def sample_coarse_literal(rng: np.random.Generator, true_count: int,
                          delta_fail: float, trials: int) -> np.ndarray:
    length = coarse_tuple_len(delta_fail)
    if true_count == 0:
        return np.zeros(trials)
    out = np.empty(trials)
    batch = max(1, (1 << 23) // max(1, true_count * length))
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        draws, _ = geometric_tosses(rng, (b, true_count, length))
        maxima = draws.max(axis=1).astype(np.float64)
        out[done:done + b] = np.median(np.exp2(maxima), axis=1)
        done += b
    return out


def _fine_collapsed(rng, count, length, trials):
    draws = exponential_min_draws(rng, count, (trials, length))
    return length / draws.sum(axis=1)


def sample_fine_estimates(rng: np.random.Generator, true_count: int,
                          epsilon: float, trials: int, c: float = 1.0,
                          upper_bound: float | None = None,
                          delta_fail: float = 0.01) -> np.ndarray:
    """Fine estimates through the full pipeline (coarse -> N -> fine).

    When ``upper_bound`` is given the coarse stage is skipped and the bound
    used directly.
    """
    if true_count == 0:
        return np.zeros(trials)
    if upper_bound is not None:
        length = fine_tuple_len(upper_bound, epsilon, c)
        return _fine_collapsed(rng, true_count, length, trials)
    coarse = sample_coarse_estimates(rng, true_count, delta_fail, trials)
    out = np.empty(trials)
    for n_cap in np.unique(coarse):
        idx = np.nonzero(coarse == n_cap)[0]
        length = fine_tuple_len(2.0 * n_cap, epsilon, c)
        out[idx] = _fine_collapsed(rng, true_count, length, idx.size)
    return out


def sample_fine_literal(rng: np.random.Generator, true_count: int,
                        epsilon: float, trials: int, c: float = 1.0,
                        upper_bound: float = 64.0) -> np.ndarray:
    length = fine_tuple_len(upper_bound, epsilon, c)
    out = np.empty(trials)
    batch = max(1, (1 << 23) // max(1, true_count * length))
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        draws = exponential_draws(rng, (b, true_count, length))
        out[done:done + b] = length / draws.min(axis=1).sum(axis=1)
        done += b
    return out


def sample_edge_estimates(rng: np.random.Generator, degree_sum: int,
                          epsilon: float, trials: int, c: float = 1.0,
                          delta_fail: float = 0.01) -> np.ndarray:
    """Edge-count estimates, i.e. the fine pipeline over ``degree_sum``
    simulated members, halved."""
    if degree_sum == 0:
        return np.zeros(trials)
    coarse = sample_coarse_estimates(rng, degree_sum, delta_fail, trials)
    out = np.empty(trials)
    for n_cap in np.unique(coarse):
        idx = np.nonzero(coarse == n_cap)[0]
        length = fine_tuple_len(2.0 * n_cap, epsilon, c)
        out[idx] = _fine_collapsed(rng, degree_sum, length, idx.size)
    return out / 2.0


def write_estimator_trace(path: str, rows: list[tuple]) -> None:
    """CSV trace (trial, true_value, estimate, tuple_len, rounds)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("trial,true_value,estimate,tuple_len,rounds\n")
        for row in rows:
            fh.write(",".join(repr(x) if isinstance(x, float) else str(x)
                              for x in row) + "\n")
