"""Scenario execution, guarantee bookkeeping and report emission.

Every query record is self-auditing: the answer's density is recomputed as
an exact rational from the raw graph snapshot at answer time, never trusted
from protocol scalars, and scored against the exact oracle on that same
snapshot.  Queries whose snapshot fails the density precondition
``24*T*r / eps`` (``/k`` for size-constrained queries) are tagged
"unconditioned" and excluded from guarantee assertions but still reported.

``T`` is the measured wall length in rounds of the pass a query read, or
the gap from that pass's edge-count start to the answer round, whichever is
larger - a conservative stand-in for the analysis constant.

Reports are deterministic functions of (config, seed): exact values are
serialized as "num/den" strings and floats via repr, so byte-identical
re-runs are asserted rather than hoped for.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass
from fractions import Fraction

from .adversary import adversary_from_spec
from .errors import ConfigError, DesyncDetected
from .graph import DynamicGraph, induced_density
from .netsim import EventLog, World
from .oracle import OracleCache, at_least_k_bounds
from .protocol import (FamilySnapshot, ProtocolNode, ProtocolParams,
                       level_round_cost)
from .scenarios import ScenarioConfig


def _frac_str(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


@dataclass
class RunReport:
    config: dict
    seed: int
    rounds_run: int
    queries: list[dict]
    passes: list[dict]
    ledger: dict
    truncated_tosses: int
    log_digest: str | None
    flags: dict

    def to_json_bytes(self) -> bytes:
        payload = {"config": self.config, "seed": self.seed,
                   "rounds_run": self.rounds_run, "queries": self.queries,
                   "passes": self.passes, "ledger": self.ledger,
                   "truncated_tosses": self.truncated_tosses,
                   "log_digest": self.log_digest, "flags": self.flags}
        return (json.dumps(payload, sort_keys=True, indent=1) + "\n").encode()


class _RunState:
    def __init__(self, world: World, handlers: list[ProtocolNode]):
        self.world = world
        self.handlers = handlers
        self.seen_passes = 0
        self.seen_outcomes = 0
        self.seen_level_key = (0, 0)
        self.pending_scores: list[tuple] = []  # (outcomes, snapshot_edges, round)
        self.published: list[FamilySnapshot] = []

    # runs at every round's compute end: graph still in round-start state
    def on_compute_end(self, world: World) -> None:
        h0 = self.handlers[0]
        key = (h0.pass_index, len(h0.records))
        if key != self.seen_level_key and h0.records:
            rec = h0.records[-1]
            for h in self.handlers[1:]:
                other = h.records[-1] if h.records else None
                if other is None or (other.node_est, other.edge_est) != \
                        (rec.node_est, rec.edge_est):
                    raise DesyncDetected(
                        f"level records diverge at round {world.clock.round}")
        self.seen_level_key = key
        if h0.family_version > self.seen_passes:
            self.seen_passes = h0.family_version
            fam = h0.family
            for h in self.handlers[1:]:
                if h.family is None or h.family.records != fam.records:
                    raise DesyncDetected("family records diverge across nodes")
            self.published.append(fam)
            if world.log:
                world.log.append({"round": world.clock.round, "event": "pass",
                                  "pass": fam.pass_index,
                                  "closed_by": fam.closed_by,
                                  "levels": len(fam.records)})
        if len(h0.outcomes) > self.seen_outcomes:
            self.seen_outcomes = len(h0.outcomes)
            outs = [h.outcomes[-1] for h in self.handlers]
            base = outs[0]
            for o in outs[1:]:
                if (o.completed_round, o.chosen, o.attempts, o.no_family) != \
                        (base.completed_round, base.chosen, base.attempts,
                         base.no_family):
                    raise DesyncDetected("query outcomes diverge across nodes")
            self.pending_scores.append(
                (outs, self.world.graph.snapshot(), world.clock.round))
            if world.log:
                world.log.append({"round": world.clock.round, "event": "query",
                                  "k": base.k, "chosen": base.chosen,
                                  "no_family": base.no_family,
                                  "attempts": base.attempts})


def _score_query(outs, snapshot_edges, node_count: int,
                 params: ProtocolParams, cache: OracleCache) -> dict:
    base = outs[0]
    row: dict = {
        "round_fired": base.fired_round,
        "round_answered": base.completed_round,
        "k": base.k,
        "no_family": base.no_family,
    }
    if base.no_family:
        row["status"] = "no-complete-family"
        return row
    members = frozenset(o.node_id for o in outs if o.in_answer)
    g = DynamicGraph.from_edges(node_count, sorted(snapshot_edges))
    sd = induced_density(g, members) if members else None
    fam_pass = base.snapshot
    row.update({
        "status": "answered",
        "snapshot": fam_pass,
        "chosen_level": base.chosen,
        "chosen_ratio": base.chosen_ratio,
        "answer_size": len(members),
        "answer_hash": hashlib.sha256(
            ",".join(map(str, sorted(members))).encode()).hexdigest()[:16],
        "answer_density": _frac_str(sd.density) if sd else "0/1",
        "padded": base.padded,
        "attempts": base.attempts,
        "accepted_attempt": base.accepted_attempt,
        "cap_exceeded": base.cap_exceeded,
    })
    ans_density = sd.density if sd else Fraction(0)
    k = base.k
    eps = Fraction(params.epsilon)
    delta = Fraction(params.delta)
    if k == 0:
        oracle_res = cache.exact_densest(g)
        rho_upper = rho_lower = oracle_res.density
        method = oracle_res.method
        bound = Fraction(2) + eps
    else:
        rho_lower, rho_upper, _ = at_least_k_bounds(
            g, k, cache.exact_densest(g) if g.node_count > 20 else None)
        rho_lower = max(rho_lower, ans_density if len(members) >= k else rho_lower)
        method = "enumeration" if g.node_count <= 20 else "bounds"
        bound = Fraction(3) + eps
    ratio = rho_upper / ans_density if ans_density > 0 else None
    row.update({
        "oracle_density": _frac_str(rho_upper),
        "oracle_lower": _frac_str(rho_lower),
        "oracle_method": method,
        "ratio": _frac_str(ratio) if ratio is not None else None,
        "bound_factor": float(bound),
    })
    guarantee_ok = ans_density * bound >= rho_upper
    size_ok = (k == 0) or len(members) >= k
    row["guarantee_ok"] = bool(guarantee_ok)
    row["size_ok"] = bool(size_ok)
    return row


def finish_query_row(row: dict, snapshot: FamilySnapshot, params: ProtocolParams,
                     churn_rate: int) -> None:
    """Attach timing markers and the precondition tag (needs the pass)."""
    if row.get("status") != "answered":
        return
    chosen = row["chosen_level"]
    rec = snapshot.records[chosen]
    pass_len = snapshot.end_round - snapshot.start_round + 1
    t_to_edges = row["round_answered"] - rec.edges_start
    t_used = max(pass_len, t_to_edges)
    row["t_pass_start"] = snapshot.start_round
    row["t_pass_end"] = snapshot.end_round
    row["t_edges_start"] = rec.edges_start  # edge counting of the chosen level
    row["t_level_set"] = rec.threshold_round
    row["T_used"] = t_used
    eps = Fraction(params.epsilon)
    need = Fraction(24 * t_used * churn_rate) / eps
    row["precondition_threshold"] = _frac_str(need)
    rho_lower = Fraction(*map(int, row["oracle_lower"].split("/")))
    if row["k"] == 0:
        row["conditioned"] = bool(rho_lower >= need)
    else:
        row["conditioned"] = bool(Fraction(row["k"]) * rho_lower >= need)
    # numeric check of the size bound the analysis leans on
    n_est = rec.node_est
    d = params.delta
    if row["padded"]:
        cap = row["k"] * (1 + d) * (1 + 2 * d) / (1 - d)
    else:
        cap = n_est / (1 - d)
    row["size_bound_ok"] = bool(row["answer_size"] <= cap + 1e-9)


def run_scenario(conf: dict | ScenarioConfig, *, cache: OracleCache | None = None,
                 log_path: str | None = None) -> RunReport:
    config = conf if isinstance(conf, ScenarioConfig) else ScenarioConfig.from_dict(conf)
    built, params = config.build()
    g = built.graph
    churn_rate = int(config.adversary_spec.get("rate", 0)) \
        if config.adversary_spec else 0
    g.churn_rate = churn_rate
    adversary = adversary_from_spec(config.adversary_spec, g, config.seed,
                                    built.protected)
    cache = cache or OracleCache()
    log = None
    if log_path or config.report.get("emit_log"):
        out_dir = config.report.get("out") or "."
        path = log_path or os.path.join(out_dir, "events.ndjson")
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        log = EventLog(path)
        log.append({"event": "config", "config": config.raw,
                    "seed": config.seed})
    handlers = [ProtocolNode(i, g.node_count, params)
                for i in range(g.node_count)]
    world = World(g, handlers, seed=config.seed, adversary=adversary, log=log)
    state = _RunState(world, handlers)
    world.on_compute_end.append(state.on_compute_end)

    duration = config.duration
    target_passes = duration.get("passes")
    target_rounds = duration.get("rounds")
    qspec = config.queries
    fired = 0
    last_seen_pass = 0
    pending_rounds = sorted(qspec["rounds"]) if qspec and qspec["mode"] == "at-rounds" else []
    for r in pending_rounds:
        world.inject_query(r, int(qspec["k"]))
    hard_cap = (target_rounds if target_rounds is not None else
                (target_passes + 2) * params.p_cap * level_round_cost(params.diameter)
                + params.pad_cap * 2 * params.diameter + 64)
    if params.strict_congest:
        hard_cap *= 4096

    def queries_pending() -> bool:
        return handlers[0].query is not None or bool(world._pending_query)

    while True:
        r = world.clock.round
        if (qspec and qspec["mode"] == "per-pass"
                and handlers[0].family_version > last_seen_pass):
            last_seen_pass = handlers[0].family_version
            if (handlers[0].pass_index >= int(qspec.get("start_pass", 1))
                    and fired < int(qspec.get("limit") or 1 << 30)
                    and not queries_pending()):
                world.inject_query(r, int(qspec["k"]))
                fired += 1
        if target_rounds is not None and r >= target_rounds and not queries_pending():
            break
        if (target_passes is not None
                and handlers[0].pass_index >= target_passes
                and not queries_pending()):
            break
        if r >= hard_cap:
            raise RuntimeError(f"run exceeded hard round cap {hard_cap}")
        world.run_round()

    # score collected queries
    snap_by_pass = {fam.pass_index: fam for fam in state.published}
    rows = []
    for outs, snapshot_edges, round_ in state.pending_scores:
        row = _score_query(outs, snapshot_edges, g.node_count, params, cache)
        if row.get("status") == "answered":
            finish_query_row(row, snap_by_pass[row["snapshot"]], params,
                             churn_rate)
        rows.append(row)

    passes = []
    for fam in state.published:
        levels = [{"j": rec.j, "node_est": rec.node_est,
                   "edge_est": rec.edge_est, "ratio": rec.ratio,
                   "nodes_start": rec.nodes_start,
                   "edges_start": rec.edges_start,
                   "threshold_round": rec.threshold_round}
                  for rec in fam.records]
        passes.append({"pass": fam.pass_index, "start": fam.start_round,
                       "end": fam.end_round,
                       "length": fam.end_round - fam.start_round + 1,
                       "closed_by": fam.closed_by, "levels": levels})

    flags = {
        "exact_counting": params.exact_counting,
        "strict_congest": params.strict_congest,
        "guarantee_failures": sum(
            1 for row in rows if row.get("status") == "answered"
            and row.get("conditioned") and not row.get("guarantee_ok")),
        "size_failures": sum(
            1 for row in rows if row.get("status") == "answered"
            and not row.get("size_ok", True)),
        "conditioned_queries": sum(
            1 for row in rows if row.get("conditioned")),
        "answered_queries": sum(
            1 for row in rows if row.get("status") == "answered"),
    }
    if log:
        log.close()
    return RunReport(config=config.raw, seed=config.seed,
                     rounds_run=world.clock.round, queries=rows, passes=passes,
                     ledger=world.ledger.summary(),
                     truncated_tosses=sum(h.truncated_tosses for h in handlers),
                     log_digest=log.digest() if log else None, flags=flags)


# -- budget checks ---------------------------------------------------------------


@dataclass
class BudgetCheck:
    rows: list[dict]
    ok: bool


def check_round_budget(report: RunReport) -> BudgetCheck:
    """Pass lengths vs ``p_cap*(4D+1)``, exact 2D counting spans, padding caps."""
    conf = ScenarioConfig.from_dict(report.config)
    built, params = conf.build()
    if params.strict_congest:
        return BudgetCheck([{"check": "strict-mode", "ok": True,
                             "note": "round budgets apply to logical mode"}], True)
    d = params.diameter
    limit = params.p_cap * level_round_cost(d)
    rows = []
    ok = True
    for p in report.passes:
        row = {"check": "pass-length", "pass": p["pass"],
               "length": p["length"], "limit": limit,
               "ok": p["length"] <= limit}
        # the very first pass carries the initial node count for level 0 plus
        # the closure-detection tail; later passes reuse n_0
        if p["pass"] == 0 and p["closed_by"] != "cap":
            row["limit"] = limit
        ok &= row["ok"]
        rows.append(row)
        for lvl in p["levels"]:
            if lvl["nodes_start"] is not None:
                span = lvl["edges_start"] - lvl["nodes_start"]
                good = span == 2 * d
                rows.append({"check": "node-count-span", "pass": p["pass"],
                             "level": lvl["j"], "span": span,
                             "expected": 2 * d, "ok": good})
                ok &= good
            if lvl["threshold_round"] is not None:
                span = lvl["threshold_round"] - lvl["edges_start"]
                good = span == 2 * d
                rows.append({"check": "edge-count-span", "pass": p["pass"],
                             "level": lvl["j"], "span": span,
                             "expected": 2 * d, "ok": good})
                ok &= good
    for q in report.queries:
        if q.get("status") == "answered" and q.get("padded"):
            good = q["attempts"] <= params.pad_cap
            rows.append({"check": "padding-attempts", "attempts": q["attempts"],
                         "cap": params.pad_cap, "ok": good})
            ok &= good
    return BudgetCheck(rows, ok)


# -- emission and replay -----------------------------------------------------------


def queries_csv(report: RunReport) -> str:
    cols = ["round_fired", "round_answered", "k", "status", "snapshot",
            "chosen_level", "answer_size", "answer_density", "oracle_density",
            "oracle_method", "ratio", "bound_factor", "guarantee_ok",
            "size_ok", "conditioned", "T_used", "precondition_threshold",
            "padded", "attempts", "cap_exceeded"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore",
                            lineterminator="\n")
    writer.writeheader()
    for row in report.queries:
        writer.writerow(row)
    return buf.getvalue()


def series_csv(report: RunReport) -> str:
    """Gnuplot-ready density-vs-round table (pass bests and query answers)."""
    lines = ["# round kind value"]
    for p in report.passes:
        best = max((lvl["ratio"] for lvl in p["levels"]), default=0.0)
        lines.append(f"{p['end']} pass-best-ratio {best!r}")
    for q in report.queries:
        if q.get("status") == "answered":
            num, den = q["answer_density"].split("/")
            lines.append(f"{q['round_answered']} answer-density "
                         f"{int(num) / int(den)!r}")
    return "\n".join(lines) + "\n"


def emit_report(report: RunReport, out_dir: str) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    paths["json"] = os.path.join(out_dir, "report.json")
    with open(paths["json"], "wb") as fh:
        fh.write(report.to_json_bytes())
    paths["csv"] = os.path.join(out_dir, "queries.csv")
    with open(paths["csv"], "w", encoding="utf-8") as fh:
        fh.write(queries_csv(report))
    paths["series"] = os.path.join(out_dir, "series.csv")
    with open(paths["series"], "w", encoding="utf-8") as fh:
        fh.write(series_csv(report))
    return paths


@dataclass
class ReplayResult:
    identical: bool
    first_divergence: int | None
    original_lines: int
    replay_lines: int


def replay_log(path: str, replay_out: str) -> ReplayResult:
    """Re-execute the run embedded in an event log and diff line by line."""
    with open(path, "r", encoding="utf-8") as fh:
        original = fh.read().splitlines()
    if not original:
        raise ConfigError("empty event log")
    header = json.loads(original[0])
    if header.get("event") != "config":
        raise ConfigError("event log lacks a config header")
    run_scenario(header["config"], log_path=replay_out)
    with open(replay_out, "r", encoding="utf-8") as fh:
        replayed = fh.read().splitlines()
    first = None
    for i, (a, b) in enumerate(zip(original, replayed)):
        if a != b:
            first = i
            break
    if first is None and len(original) != len(replayed):
        first = min(len(original), len(replayed))
    return ReplayResult(first is None, first, len(original), len(replayed))
