import itertools
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subgoal_hierarchy import miner
from subgoal_hierarchy.harness import data_path


def brute_force(transactions, minsup):
    n = len(transactions)
    items = sorted(set().union(*(t.items for t in transactions)))
    out = {}
    for k in range(1, len(items) + 1):
        for combo in itertools.combinations(items, k):
            c = sum(1 for t in transactions if set(combo) <= t.items)
            if c / n >= minsup - 1e-12:
                out[frozenset(combo)] = c
    return out


def tx(*rows):
    return miner.trajectories_to_transactions([list(r) for r in rows])


@pytest.fixture(scope="module")
def golden_tx():
    return miner.trajectories_to_transactions(miner.read_transactions_csv(data_path("golden_transactions.csv")))


def test_transactions_first_occurrence():
    (t,) = tx([5, 3, 5, 9])
    assert t.items == {3, 5, 9}
    assert t.first_occurrence == {5: 0, 3: 1, 9: 3}
    assert t.ordered({9, 5, 3}) == (5, 3, 9)


def test_empty_trajectories_skipped(caplog):
    with caplog.at_level(logging.WARNING):
        out = miner.trajectories_to_transactions([[], [1, 2]])
    assert len(out) == 1 and "skipped 1" in caplog.text


def test_golden_frequent_sets(golden_tx):
    found = miner.fp_growth(golden_tx, 0.9)
    core = {7, 27, 34, 54}
    assert {f.items for f in found} == {
        frozenset(c) for k in range(1, 5) for c in itertools.combinations(core, k)
    }
    assert all(f.support == 1.0 and f.count == 6 for f in found)


def test_golden_measures(golden_tx):
    assert miner.rule_support([1], [58], golden_tx) == pytest.approx(1 / 6)
    assert miner.rule_confidence([7], [34], golden_tx) == 1.0
    assert miner.rule_confidence([7], [34], golden_tx, sequential=True) == 1.0
    assert miner.rule_confidence([34], [7], golden_tx, sequential=True) == 0.0
    assert miner.rule_confidence([99], [7], golden_tx) == 0.0


def test_golden_rule(golden_tx):
    rules = miner.generate_rules(miner.fp_growth(golden_tx, 0.9), golden_tx, 0.9)
    assert len(rules) == 1
    r = rules[0]
    assert (r.premise, r.consequent, r.support, r.confidence, r.order_frequency) == ((7, 27, 34), 54, 1.0, 1.0, 6)
    assert "s7,s27,s34 -> s54" in str(r)


def test_minsup_bounds():
    with pytest.raises(ValueError):
        miner.fp_growth(tx([1]), 0.0)
    assert miner.fp_growth([], 0.5) == []


def test_inclusive_threshold():
    t = tx([1, 2], [1], [2], [3])
    got = {f.items: f.count for f in miner.fp_growth(t, 0.5)}
    assert got == {frozenset({1}): 2, frozenset({2}): 2}


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.sets(st.integers(0, 9), min_size=1), min_size=1, max_size=50),
    st.sampled_from([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]),
)
def test_fp_growth_equals_brute_force(rows, minsup):
    t = tx(*[sorted(r) for r in rows])
    got = {f.items: f.count for f in miner.fp_growth(t, minsup)}
    assert got == brute_force(t, minsup)


def test_fp_tree_structure():
    tree = miner.FPTree([([1, 2], 1), ([2, 3], 1), ([2], 1)], 1)
    assert list(tree.rank) == [2, 1, 3]
    assert sum(n.count for n in tree.nodes(2)) == 3
    assert sorted(tree.prefix_paths(3)) == [([2], 1)]


def test_maximal_itemsets():
    f = [miner.FrequentItemset(frozenset(s), 1, 1.0) for s in ([1], [2], [1, 2], [3])]
    assert [m.items for m in miner.maximal_itemsets(f)] == [frozenset({3}), frozenset({1, 2})]


def test_order_premise_counts_orderings():
    t = tx([1, 2, 3], [2, 1, 3], [1, 2, 3])
    assert miner.order_premise({1, 2}, t) == [((1, 2), 2), ((2, 1), 1)]


def test_rules_per_ordering_and_sorting():
    t = tx([1, 2, 3], [2, 1, 3], [1, 2, 3], [1, 2, 3])
    rules = miner.generate_rules(miner.fp_growth(t, 0.9), t, 0.5)
    assert [r.sequence for r in rules] == [(1, 2, 3), (2, 1, 3)]
    assert [r.order_frequency for r in rules] == [3, 1]


def test_rule_confidence_filter():
    t = tx([1, 2], [1], [1], [1, 2])
    rules = miner.generate_rules(miner.fp_growth(t, 0.5), t, 0.6)
    assert rules == []
    rules = miner.generate_rules(miner.fp_growth(t, 0.5), t, 0.5)
    assert [(r.sequence, r.confidence) for r in rules] == [((1, 2), 0.5)]


def exhaustive_rule_count(d):
    items = range(d)
    n = 0
    for a_mask in range(1, 2**d):
        for b_mask in range(1, 2**d):
            if a_mask & b_mask == 0:
                n += 1
    return n


@pytest.mark.parametrize("d", range(1, 7))
def test_candidate_rule_count(d):
    assert miner.candidate_rule_count(d) == exhaustive_rule_count(d)


def test_candidate_rule_count_limits():
    assert miner.candidate_rule_count(3) == 12
    with pytest.raises(ValueError):
        miner.candidate_rule_count(0)
    with pytest.raises(OverflowError):
        miner.candidate_rule_count(40)


def test_cluster_adjacent(golden_tx):
    assert miner.cluster_adjacent_subgoals({7, 27, 34, 54}, golden_tx, 1) == [(7, 27), (34, 54)]
    assert miner.cluster_adjacent_subgoals({7, 27, 34, 54}, golden_tx, 0) == [(7,), (27,), (34,), (54,)]
    with pytest.raises(ValueError):
        miner.cluster_adjacent_subgoals({7}, golden_tx, -1)


def test_csv_round_trips(tmp_path, golden_tx):
    rows = [[1, 2, 3], [4]]
    miner.write_transactions_csv(tmp_path / "t.csv", rows)
    assert miner.read_transactions_csv(tmp_path / "t.csv") == rows
    rules = miner.generate_rules(miner.fp_growth(golden_tx, 0.9), golden_tx, 0.9)
    miner.write_rules_csv(tmp_path / "r.csv", rules)
    assert miner.read_rules_csv(tmp_path / "r.csv") == rules
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "premise,consequent,support,confidence,order_freq"
