"""Per-node state machines: continuous maintenance of a nested candidate
family, and query-time extraction with randomized padding.

Maintenance pipeline (all nodes in lockstep, driven only by the shared
round counter and the diameter bound D):

* level j opens with 2D rounds of node counting for V_j (coarse max-merge,
  then fine min-merge seeded with N = 2 * coarse).  The last fine round also
  carries a 1-bit membership marker so every node learns its degree inside
  V_j without a separate warm-up round.
* 2D rounds of edge counting follow (each member simulates d_u copies,
  merged locally), then one threshold round: members broadcast membership,
  count member neighbors, and survive into V_{j+1} iff their degree is at
  least ``factor * m_j / n_j`` (ties stay; the ratio is evaluated once in
  binary64 so every node compares the identical value).

A level therefore costs exactly ``4D + 1`` communication rounds.

Pass closure.  A pass completes when a level counts to zero, when nobody
dropped at the previous threshold (a fixed point - detected by OR-flooding a
1-bit "someone dropped" marker on the next level's coarse rounds), or when
``p_cap`` levels fill up.  On closure the finished family is published
(double-buffered; queries always read the last complete one) and the next
pass restarts at level 0 *without* recounting n_0: node counts never change,
so the retained estimate stays valid and level 0 of later passes costs only
``2D + 1`` rounds.  Fixed-point detection spends the 2D node-count rounds of
the would-be next level, which keeps every pass within ``p_cap * (4D + 1)``
rounds.

Queries snapshot the published family, pick ``argmax_i m_i / max(k, n_i)``
(ties to the smallest index), and either answer immediately or run the
padding loop: non-members enroll with probability ``delta_target / n_0``,
the enrolled set is counted (2D rounds per attempt), and the loop accepts
when the count lands in ``[(1+d)*target, (1+2d)*target]``.  After
``pad_cap`` attempts the best attempt seen is returned with a loud warning
flag instead of looping forever.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .counting import (MergeStage, coarse_tuple_len, degs_stage, degs_sum,
                       exp_stage, fine_tuple_len, finalize_coarse,
                       finalize_fine, geo_stage, ids_count, ids_stage)
from .errors import UnknownSnapshot
from .netsim import FlagsPart, MessagePart, StepContext

MAINT_TAGS = {"nc": "m.nc", "nf": "m.nf", "ec": "m.ec", "ef": "m.ef"}
MEMBER_TAG = "m.member"
DROP_TAG = "m.drop"
QUERY_COARSE_TAG = "q.pc"
QUERY_FINE_TAG = "q.pf"


def threshold_value(ratio: float, factor: float) -> float:
    """Survival threshold for one level, evaluated in binary64.

    Shared by the embedded protocol and the centralized peeling reference so
    both compare against bit-identical values.
    """
    return factor * ratio


def level_round_cost(diameter: int) -> int:
    """Communication rounds per level: 2D node count + 2D edge count + 1."""
    return 4 * diameter + 1


def default_p_cap(node_count: int, delta: float) -> int:
    if node_count < 2:
        return 2
    return max(2, math.ceil(math.log(node_count) / math.log1p(delta)) + 1)


def default_pad_cap(node_count: int) -> int:
    return max(1, math.ceil(8.0 * math.log(max(node_count, 2))))


@dataclass(frozen=True)
class ProtocolParams:
    """Knobs every node receives before round 0."""

    epsilon: float
    diameter: int
    k: int = 0
    count_eps: float | None = None   # error handed to the estimators
    delta_fail: float = 0.01         # coarse-stage failure probability
    c: float = 1.0                   # fine-stage length constant
    p_cap: int = 64                  # max levels per pass
    pad_cap: int = 32                # max padding attempts per query
    exact_counting: bool = False
    strict_congest: bool = False
    threshold_factor: float | None = None

    def __post_init__(self):
        if not (0 < self.epsilon <= 1):
            raise ValueError("epsilon must be in (0,1]")
        if self.diameter < 1:
            raise ValueError("diameter must be >= 1")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.exact_counting and self.strict_congest:
            raise ValueError("strict mode applies to tuple estimators only")

    @property
    def delta(self) -> float:
        return self.epsilon / 24.0

    @property
    def counting_eps(self) -> float:
        return self.count_eps if self.count_eps is not None else self.epsilon

    @property
    def factor(self) -> float:
        return self.threshold_factor if self.threshold_factor is not None \
            else 1.0 + self.delta


def params_for(node_count: int, epsilon: float, diameter: int,
               **overrides) -> ProtocolParams:
    delta = epsilon / 24.0
    base = dict(epsilon=epsilon, diameter=diameter,
                p_cap=default_p_cap(node_count, delta),
                pad_cap=default_pad_cap(node_count))
    base.update(overrides)
    return ProtocolParams(**base)


@dataclass(frozen=True)
class LevelRecord:
    """Network-wide scalars for one completed level."""

    j: int
    node_est: float
    edge_est: float
    ratio: float
    nodes_start: int | None  # None for the reused-n0 level of later passes
    edges_start: int
    threshold_round: int | None


@dataclass(frozen=True)
class FamilySnapshot:
    """One complete pass: shared records plus this node's own flags."""

    pass_index: int
    records: tuple[LevelRecord, ...]
    flags: tuple[bool, ...]
    start_round: int
    end_round: int
    closed_by: str  # "empty" | "fixed-point" | "cap"


@dataclass(frozen=True)
class QueryOutcome:
    node_id: int
    k: int
    fired_round: int
    completed_round: int
    no_family: bool
    snapshot: int | None = None
    chosen: int | None = None
    chosen_ratio: float | None = None
    in_answer: bool = False
    padded: bool = False
    attempts: int = 0
    accepted_attempt: int | None = None
    cap_exceeded: bool = False
    delta_target: float | None = None
    delta_estimates: tuple[float, ...] = ()


def query_argmax(records: tuple[LevelRecord, ...], k: int) -> int:
    """Index maximizing ``edge_est / max(k, node_est)``; ties -> smallest."""
    best, best_val = 0, -1.0
    for idx, rec in enumerate(records):
        denom = max(float(k), rec.node_est)
        val = rec.edge_est / denom if denom > 0 else 0.0
        if val > best_val:
            best, best_val = idx, val
    return best


@dataclass
class _QueryRun:
    k: int
    fired_round: int
    snapshot: FamilySnapshot
    chosen: int
    member_vi: bool
    delta_target: float
    head_p: float
    window: tuple[float, float]
    attempt: int = 0
    coins: list[bool] = field(default_factory=list)
    estimates: list[float] = field(default_factory=list)
    seg: str = "pc"
    boundary: int = 0
    stage: MergeStage | None = None
    coarse: float = 0.0


class ProtocolNode:
    """One node's full behavior: maintenance plus at most one active query."""

    def __init__(self, node_id: int, node_count: int, params: ProtocolParams):
        self.node_id = node_id
        self.node_count = node_count
        self.params = params
        # maintenance machine
        self.seg = "nc"
        self.seg_start = 0
        self.seg_len = params.diameter
        self.level = 0
        self.member = True
        self.records: list[LevelRecord] = []
        self.flags: list[bool] = [True]
        self.pass_start = 0
        self.pass_index = 0
        self.n0: float | None = None
        self.level_node_est: float | None = None
        self.level_nodes_start: int | None = 0
        self.level_edges_start: int | None = None
        self.du = 0
        self.drop_out = False   # my own "I dropped" bit
        self.drop_seen = False  # OR over the flooding window
        self.stage: MergeStage | None = None
        self.coarse: float = 0.0
        self.family: FamilySnapshot | None = None
        self.family_version = 0
        self.truncated_tosses = 0
        self._member_flags_heard = 0
        self._started = False
        # query machine
        self.query: _QueryRun | None = None
        self.outcomes: list[QueryOutcome] = []

    # -- helpers ----------------------------------------------------------

    def _fresh_geo(self, tag: str, rng, copies: int = 1) -> MergeStage:
        st, trunc = geo_stage(tag, self.params.diameter,
                              coarse_tuple_len(self.params.delta_fail),
                              self.member, rng, copies=copies,
                              strict=self.params.strict_congest)
        self.truncated_tosses += trunc
        return st

    def _segment_rounds(self, seg: str) -> int:
        if seg == "th":
            return 1
        if self.stage is not None and self.params.strict_congest:
            return self.stage.rounds()
        return self.params.diameter

    def _enter(self, seg: str, round_: int, stage: MergeStage | None) -> None:
        self.seg = seg
        self.seg_start = round_
        self.stage = stage
        self.seg_len = self._segment_rounds(seg)

    # -- absorb -----------------------------------------------------------

    def _absorb(self, ctx: StepContext) -> None:
        q_tag = None
        if self.query and self.query.stage is not None:
            q_tag = self.query.stage.tag
        for msg in ctx.inbox:
            for part in msg.parts:
                if isinstance(part, FlagsPart):
                    if part.tag == MEMBER_TAG and part.member:
                        self._member_flags_heard += 1
                    if part.tag == DROP_TAG and part.dropped:
                        self.drop_seen = True
                elif self.stage is not None and part.tag == self.stage.tag:
                    self.stage.absorb(part)
                elif q_tag is not None and part.tag == q_tag:
                    self.query.stage.absorb(part)

    # -- maintenance transitions -------------------------------------------

    def _close_pass(self, round_: int, reason: str) -> None:
        self.family = FamilySnapshot(
            pass_index=self.pass_index,
            records=tuple(self.records),
            flags=tuple(self.flags[:len(self.records)]),
            start_round=self.pass_start,
            end_round=round_ - 1,
            closed_by=reason)
        self.family_version += 1
        self.pass_index += 1

    def _restart_level0(self, ctx: StepContext) -> None:
        self.level = 0
        self.member = True
        self.records = []
        self.flags = [True]
        self.pass_start = ctx.round
        self.level_node_est = self.n0
        self.level_nodes_start = None
        self.level_edges_start = ctx.round
        self.du = ctx.neighbor_count
        self._enter("ec", ctx.round, self._edge_coarse_stage(ctx))

    def _edge_coarse_stage(self, ctx: StepContext) -> MergeStage:
        p = self.params
        if p.exact_counting:
            return degs_stage(MAINT_TAGS["ec"], p.diameter, self.node_count,
                              self.node_id, self.member, self.du)
        st, trunc = geo_stage(MAINT_TAGS["ec"], p.diameter,
                              coarse_tuple_len(p.delta_fail),
                              self.member and self.du > 0, ctx.rng,
                              copies=max(self.du, 1) if self.member else 0,
                              strict=p.strict_congest)
        self.truncated_tosses += trunc
        return st

    def _advance(self, ctx: StepContext) -> None:
        if self.seg == "th" or self.stage is not None:
            boundary = self.seg_start + self.seg_len
        else:
            boundary = None
        if boundary is None or ctx.round != boundary:
            return
        p = self.params
        seg = self.seg
        if seg == "nc":
            if p.exact_counting:
                # the union keeps flooding through the fine half of the window
                self._enter("nf", ctx.round, self.stage)
            else:
                self.coarse = finalize_coarse(
                    self.stage.acc if self.stage.has_data
                    else np.zeros(1, np.uint8))
                length = fine_tuple_len(2.0 * self.coarse, p.counting_eps, p.c)
                self._enter("nf", ctx.round,
                            exp_stage(MAINT_TAGS["nf"], p.diameter, length,
                                      self.member and self.coarse > 0,
                                      ctx.rng, strict=p.strict_congest))
            return
        if seg == "nf":
            if p.exact_counting:
                n_est = float(ids_count(self.stage))
            elif self.coarse == 0:
                n_est = 0.0
            else:
                n_est = finalize_fine(self.stage.acc if self.stage.has_data
                                      else None)
            drop_seen, self.drop_seen = self.drop_seen, False
            du_heard, self._member_flags_heard = self._member_flags_heard, 0
            if self.level == 0 and self.n0 is None:
                self.n0 = n_est
            if n_est == 0.0:
                self._close_pass(ctx.round, "empty")
                self._restart_level0(ctx)
            elif self.level > 0 and not drop_seen:
                self._close_pass(ctx.round, "fixed-point")
                self._restart_level0(ctx)
            else:
                self.level_node_est = n_est
                self.du = du_heard if self.member else 0
                self.level_edges_start = ctx.round
                self._enter("ec", ctx.round, self._edge_coarse_stage(ctx))
            return
        if seg == "ec":
            if p.exact_counting:
                self._enter("ef", ctx.round, self.stage)
            else:
                self.coarse = finalize_coarse(
                    self.stage.acc if self.stage.has_data
                    else np.zeros(1, np.uint8))
                length = fine_tuple_len(2.0 * self.coarse, p.counting_eps, p.c)
                self._enter("ef", ctx.round,
                            exp_stage(MAINT_TAGS["ef"], p.diameter, length,
                                      self.member and self.du > 0
                                      and self.coarse > 0,
                                      ctx.rng, copies=max(self.du, 1),
                                      strict=p.strict_congest))
            return
        if seg == "ef":
            if p.exact_counting:
                total = float(degs_sum(self.stage))
            elif self.coarse == 0:
                total = 0.0
            else:
                total = finalize_fine(self.stage.acc if self.stage.has_data
                                      else None)
            m_est = total / 2.0
            n_est = self.level_node_est
            rec = LevelRecord(self.level, n_est, m_est, m_est / n_est,
                              self.level_nodes_start, self.level_edges_start,
                              None)
            self.records.append(rec)
            if len(self.records) >= p.p_cap:
                self._close_pass(ctx.round, "cap")
                self._restart_level0(ctx)
            else:
                self._enter("th", ctx.round, None)
            return
        if seg == "th":
            deg = self._member_flags_heard
            self._member_flags_heard = 0
            rec = self.records[-1]
            self.records[-1] = replace(rec, threshold_round=self.seg_start)
            thr = threshold_value(rec.ratio, p.factor)
            new_member = self.member and deg >= thr
            self.drop_out = self.member and not new_member
            self.drop_seen = self.drop_out
            self.member = new_member
            self.flags.append(new_member)
            self.level += 1
            self.level_nodes_start = ctx.round
            self._enter("nc", ctx.round,
                        self._fresh_geo(MAINT_TAGS["nc"], ctx.rng)
                        if not p.exact_counting else
                        ids_stage(MAINT_TAGS["nc"], p.diameter,
                                  self.node_count, self.node_id, self.member))
            return

    def _emit(self, ctx: StepContext) -> list[MessagePart]:
        parts: list[MessagePart] = []
        if self.seg == "th":
            if self.member:
                parts.append(FlagsPart(MEMBER_TAG, member=True))
            return parts
        if self.stage is None:
            return parts
        part = self.stage.emit()
        if part is not None:
            parts.append(part)
        if self.seg == "nc" and self.drop_seen:
            parts.append(FlagsPart(DROP_TAG, dropped=True))
        if (self.seg == "nf" and self.member
                and ctx.round == self.seg_start + self.seg_len - 1):
            parts.append(FlagsPart(MEMBER_TAG, member=True))
        return parts

    # -- query machine ------------------------------------------------------

    def _start_query(self, ctx: StepContext, k: int) -> None:
        if self.query is not None:
            raise RuntimeError("query fired while another is active")
        p = self.params
        if self.family is None:
            self.outcomes.append(QueryOutcome(
                self.node_id, k, ctx.round, ctx.round, no_family=True))
            return
        snap = self.family
        chosen = query_argmax(snap.records, k)
        rec = snap.records[chosen]
        member_vi = snap.flags[chosen]
        ratio = rec.edge_est / max(float(k), rec.node_est)
        if k == 0 or rec.node_est >= (1.0 + p.delta) * k:
            self.outcomes.append(QueryOutcome(
                self.node_id, k, ctx.round, ctx.round, no_family=False,
                snapshot=snap.pass_index, chosen=chosen, chosen_ratio=ratio,
                in_answer=member_vi))
            return
        delta_target = (1.0 + p.delta) * k - rec.node_est
        head_p = min(1.0, max(0.0, delta_target / self.n0))
        window = ((1.0 + p.delta) * delta_target,
                  (1.0 + 2.0 * p.delta) * delta_target)
        self.query = _QueryRun(k, ctx.round, snap, chosen, member_vi,
                               delta_target, head_p, window)
        self._begin_attempt(ctx)

    def _begin_attempt(self, ctx: StepContext) -> None:
        q, p = self.query, self.params
        q.attempt += 1
        enrolled = (not q.member_vi) and bool(ctx.rng.random() < q.head_p)
        q.coins.append(enrolled)
        if p.exact_counting:
            q.stage = ids_stage(QUERY_COARSE_TAG, p.diameter, self.node_count,
                                self.node_id, enrolled)
        else:
            q.stage, trunc = geo_stage(QUERY_COARSE_TAG, p.diameter,
                                       coarse_tuple_len(p.delta_fail),
                                       enrolled, ctx.rng,
                                       strict=p.strict_congest)
            self.truncated_tosses += trunc
        q.seg = "pc"
        q.boundary = ctx.round + q.stage.rounds()

    def _finish_query(self, ctx: StepContext, accepted: int | None,
                      cap_exceeded: bool) -> None:
        q = self.query
        if accepted is None:
            # closest attempt to the window center, earliest on ties
            target = (q.window[0] + q.window[1]) / 2.0
            best = min(range(len(q.estimates)),
                       key=lambda i: (abs(q.estimates[i] - target), i))
        else:
            best = accepted
        self.outcomes.append(QueryOutcome(
            self.node_id, q.k, q.fired_round, ctx.round, no_family=False,
            snapshot=q.snapshot.pass_index, chosen=q.chosen,
            chosen_ratio=q.snapshot.records[q.chosen].edge_est
            / max(float(q.k), q.snapshot.records[q.chosen].node_est),
            in_answer=q.member_vi or q.coins[best],
            padded=True, attempts=q.attempt,
            accepted_attempt=None if accepted is None else accepted + 1,
            cap_exceeded=cap_exceeded, delta_target=q.delta_target,
            delta_estimates=tuple(q.estimates)))
        self.query = None

    def _query_advance_emit(self, ctx: StepContext) -> list[MessagePart]:
        q, p = self.query, self.params
        if ctx.round == q.boundary:
            if q.seg == "pc":
                if p.exact_counting:
                    q.seg = "pf"
                    q.boundary = ctx.round + p.diameter
                else:
                    q.coarse = finalize_coarse(
                        q.stage.acc if q.stage.has_data
                        else np.zeros(1, np.uint8))
                    length = fine_tuple_len(2.0 * q.coarse, p.counting_eps, p.c)
                    enrolled = q.coins[-1]
                    q.stage = exp_stage(QUERY_FINE_TAG, p.diameter, length,
                                        enrolled and q.coarse > 0, ctx.rng,
                                        strict=p.strict_congest)
                    q.seg = "pf"
                    q.boundary = ctx.round + q.stage.rounds()
            else:
                if p.exact_counting:
                    est = float(ids_count(q.stage))
                elif q.coarse == 0:
                    est = 0.0
                else:
                    est = finalize_fine(q.stage.acc if q.stage.has_data
                                        else None)
                q.estimates.append(est)
                lo, hi = q.window
                if lo <= est <= hi:
                    self._finish_query(ctx, len(q.estimates) - 1, False)
                    return []
                if q.attempt >= p.pad_cap:
                    self._finish_query(ctx, None, True)
                    return []
                self._begin_attempt(ctx)
        part = q.stage.emit()
        return [part] if part else []

    # -- engine entry point ---------------------------------------------------

    def step(self, ctx: StepContext) -> list[MessagePart] | None:
        self._absorb(ctx)
        if not self._started:
            self._started = True
            p = self.params
            self._enter("nc", ctx.round,
                        self._fresh_geo(MAINT_TAGS["nc"], ctx.rng)
                        if not p.exact_counting else
                        ids_stage(MAINT_TAGS["nc"], p.diameter,
                                  self.node_count, self.node_id, True))
        else:
            self._advance(ctx)
        parts = self._emit(ctx)
        if ctx.query_inject is not None:
            self._start_query(ctx, ctx.query_inject)
        if self.query is not None:
            parts.extend(self._query_advance_emit(ctx))
        return parts or None


def membership_query(node: ProtocolNode, snapshot_id: int) -> dict[int, bool]:
    """Local read of this node's flags for a published snapshot."""
    fam = node.family
    if fam is None or fam.pass_index != snapshot_id:
        raise UnknownSnapshot(f"snapshot {snapshot_id} is not current")
    return {rec.j: fam.flags[i] for i, rec in enumerate(fam.records)}
