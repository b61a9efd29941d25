import numpy as np
import pytest

from densetrack.adversary import (RandomChurnAdversary, ScriptedAdversary,
                                  TargetedAdversary, adversary_from_spec)
from densetrack.errors import ChurnBudgetExceeded, ConfigError, InvalidEdit
from densetrack.graph import DynamicGraph


def small_graph():
    return DynamicGraph.from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4)],
                                   churn_rate=2)


def test_scripted_noop_rejected_at_load():
    g = small_graph()
    with pytest.raises(InvalidEdit):
        ScriptedAdversary.load([{"round": 0, "op": "remove", "u": 4, "v": 5}],
                               g, rate=2)


def test_scripted_budget_checked_at_load():
    g = small_graph()
    script = [{"round": 1, "op": "remove", "u": 0, "v": 1},
              {"round": 1, "op": "remove", "u": 1, "v": 2},
              {"round": 1, "op": "remove", "u": 0, "v": 2}]
    with pytest.raises(ChurnBudgetExceeded):
        ScriptedAdversary.load(script, g, rate=2)


def test_scripted_replay_order():
    g = small_graph()
    adv = ScriptedAdversary.load(
        [{"round": 0, "op": "remove", "u": 0, "v": 1},
         {"round": 1, "op": "add", "u": 0, "v": 1}], g, rate=2)
    assert adv.edits_for_round(g, 0) == [("remove", 0, 1)]
    assert adv.edits_for_round(g, 1) == [("add", 0, 1)]
    assert adv.edits_for_round(g, 2) == []


def test_random_churn_respects_budget_and_legality():
    g = small_graph()
    rng = np.random.default_rng(0)
    adv = RandomChurnAdversary(rng=rng, rate=2)
    for r in range(60):
        batch = adv.edits_for_round(g, r)
        assert len(batch) <= 2
        g.apply_churn(batch)  # InvalidEdit would fail the test


def test_random_churn_protected_edges_survive():
    g = small_graph()
    protected = frozenset({(0, 1)})
    adv = RandomChurnAdversary(rng=np.random.default_rng(1), rate=2,
                               protected=protected)
    for r in range(80):
        g.apply_churn(adv.edits_for_round(g, r))
        assert g.has_edge(0, 1)


def test_targeted_prefers_dense_core():
    # K5 core plus sparse fringe: most deletions should land inside the core
    edges = [(i, j) for i in range(5) for j in range(i + 1, 5)]
    edges += [(5, 0), (6, 1), (7, 2)]
    g = DynamicGraph.from_edges(8, edges, churn_rate=1)
    adv = TargetedAdversary(rng=np.random.default_rng(2), rate=1,
                            refresh_every=1)
    core_hits = 0
    removals = 0
    for r in range(8):
        batch = adv.edits_for_round(g, r)
        for op, u, v in batch:
            if op == "remove":
                removals += 1
                if u < 5 and v < 5:
                    core_hits += 1
        g.apply_churn(batch)
    assert removals > 0 and core_hits >= removals * 0.5


def test_spec_validation():
    g = small_graph()
    with pytest.raises(ConfigError):
        adversary_from_spec({"kind": "random-churn", "rate": 1,
                             "bogus": True}, g, 0, frozenset())
    with pytest.raises(ConfigError):
        adversary_from_spec({"kind": "mystery"}, g, 0, frozenset())
    adv = adversary_from_spec(None, g, 0, frozenset())
    assert adv.edits_for_round(g, 0) == []
