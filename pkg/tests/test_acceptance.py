"""Acceptance criteria; each check prints one PASS/FAIL line.

Run under pytest, or directly with ``python tests/test_acceptance.py``.
"""

import itertools
import time

import numpy as np
import pytest

from subgoal_hierarchy import harness, hrl, hst, miner
from subgoal_hierarchy.codec import DomainSpec, decode, encode
from subgoal_hierarchy.envs import PRESS, Taxi, phase_maze
from subgoal_hierarchy.learner import LearnerParams, train

RESULTS: dict[int, tuple[bool, str]] = {}


def report(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    print(f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")


def golden_transactions():
    return miner.trajectories_to_transactions(
        miner.read_transactions_csv(harness.data_path("golden_transactions.csv"))
    )


def criterion_1():
    t0 = time.perf_counter()
    res = harness.run_pipeline(harness.GOLDEN_CONFIG)
    elapsed = time.perf_counter() - t0
    tx = miner.trajectories_to_transactions([t.states for t in res.trajectories])
    singles = {next(iter(f.items)): f.support for f in miner.fp_growth(tx, 0.9) if len(f.items) == 1}
    rules = [(r.premise, r.consequent) for r in res.rules]
    h = res.hierarchy
    exits = sorted(h.exits)
    ok = (
        singles == {7: 1.0, 27: 1.0, 34: 1.0, 54: 1.0}
        and rules == [((7, 27, 34), 54)]
        and exits == [hst.Exit(7, PRESS), hst.Exit(34, PRESS)]
        and len(h) == 2
        and h.top == (1,) and h[1].children == (0,)
        and h[0].states == frozenset(range(1, 21))
        and h[1].states == frozenset(range(21, 41))
        and elapsed < 1.0
    )
    return ok, f"subgoals={sorted(singles)} rule={rules} exits={exits} runtime={elapsed:.3f}s"


def criterion_2():
    tx = golden_transactions()
    sup = miner.rule_support([1], [58], tx)
    conf = miner.rule_confidence([7], [34], tx)
    return sup == 1 / 6 and conf == 1.0, f"support(s1->s58)={sup:.6f} confidence(s7->s34)={conf}"


def criterion_3():
    b, c, d, e, a = "bcdea"
    root = hst.hst_construct([(b, c, d, e), (d, b, c, e), (a, c, d, e)])
    ok = root.size() == 8 and [n.subgoal for n in root.children] == [e]
    node_e = root.children[0]
    ok &= sorted(n.subgoal for n in node_e.children) == [c, d]
    ok &= sorted(n.subgoal for n in node_e.child(d).child(c).children) == [a, b]
    before = root.paths()
    hst.insert_rule(root, (b, c, d, e))
    hst.insert_rule(root, (a, c, d, e))
    ok &= root.paths() == before and root.size() == 8
    return ok, f"nodes={root.size()} branches at e and c, idempotent re-insertion"


def _brute(transactions, minsup):
    n = len(transactions)
    items = sorted(set().union(*(t.items for t in transactions)))
    out = {}
    for k in range(1, len(items) + 1):
        for combo in itertools.combinations(items, k):
            cnt = sum(1 for t in transactions if set(combo) <= t.items)
            if cnt / n >= minsup - 1e-12:
                out[frozenset(combo)] = cnt
    return out


def _exhaustive_rules(d):
    return sum(1 for a in range(1, 2**d) for b in range(1, 2**d) if a & b == 0)


def criterion_4():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(200):
        n_items = int(rng.integers(1, 11))
        n_tx = int(rng.integers(1, 51))
        minsup = float(rng.choice(np.round(np.arange(0.1, 1.0, 0.1), 1)))
        rows = [sorted(set(rng.choice(n_items, size=int(rng.integers(1, n_items + 1))).tolist())) for _ in range(n_tx)]
        tx = miner.trajectories_to_transactions(rows)
        got = {f.items: f.count for f in miner.fp_growth(tx, minsup)}
        mismatches += got != _brute(tx, minsup)
    counts_ok = all(miner.candidate_rule_count(d) == _exhaustive_rules(d) for d in range(1, 7))
    ok = mismatches == 0 and counts_ok and miner.candidate_rule_count(3) == 12
    return ok, f"fp-growth mismatches={mismatches}/200, rule counts d<=6 {'match' if counts_ok else 'differ'}, R(3)={miner.candidate_rule_count(3)}"


def _exhaustive_codec(spec):
    codes = set()
    for digits in itertools.product(*(range(1, c + 1) for c in spec.cardinalities)):
        code = encode(spec, digits)
        if decode(spec, code) != digits:
            return False
        codes.add(code)
    return len(codes) == spec.size


def criterion_5():
    taxi = Taxi().codec
    ok = taxi.size == 500 and _exhaustive_codec(taxi)
    rng = np.random.default_rng(5)
    n_specs = 60
    for _ in range(n_specs):
        cards = rng.integers(1, 8, size=int(rng.integers(1, 6))).tolist()
        ok &= _exhaustive_codec(DomainSpec(cards))
    return ok, f"taxi 500-state domain and {n_specs} random domains round-trip injectively"


def criterion_6():
    failures, total, seeds_ok = 0, 0, 0
    for seed in range(20):
        cfg = harness.ExperimentConfig(seed=seed, runs=1)
        setup = harness.make_setup(cfg)
        trajs = harness.learn_stage(cfg, setup)
        h = harness.build_stage(cfg, setup, harness.mine_stage(cfg, trajs), trajs)
        bad = sum(not hst.check_consistency(h, t) for t in trajs)
        failures += bad
        total += len(trajs)
        seeds_ok += bad == 0
    return failures == 0, f"{total - failures}/{total} mining trajectories consistent over {seeds_ok}/20 seeds"


def criterion_7():
    t0 = time.perf_counter()
    cfg = harness.ExperimentConfig(runs=10, episodes=2000, alpha=0.1, gamma=0.9, epsilon=0.1)
    res = harness.run_pipeline(cfg)
    elapsed = time.perf_counter() - t0
    s = res.stats
    ok = s["hier_last10_reward"] > s["flat_last10_reward"] and s["p"] < 0.01 and elapsed < 300
    return ok, (
        f"hier={s['hier_last10_reward']:.2f} flat={s['flat_last10_reward']:.2f} "
        f"t={s['t']:.2f} p={s['p']:.2e} runtime={elapsed:.1f}s"
    )


def criterion_8():
    t0 = time.perf_counter()
    cfg = harness.ExperimentConfig(env="taxi", minsup=0.0625, minconf=0.7, methods="flat", runs=1,
                                   episodes=50, mining_episodes=2000)
    res = harness.run_pipeline(cfg)
    elapsed = time.perf_counter() - t0
    env = Taxi()
    tx = miner.trajectories_to_transactions([t.states for t in res.trajectories])
    goals = miner.subgoals_of(res.rules)
    pickups = env.pickup_completion_states()
    supports = [miner.count_containing([s], tx) / len(tx) for s in pickups]
    recovered = sum(s in goals for s in pickups)
    counts = res.visits
    rank = {cell: 1 + int((counts > counts[cell]).sum()) for cell in env.landmarks}
    ok = (
        recovered == 16
        and min(supports) >= cfg.minsup - 1e-12
        and max(rank.values()) <= 5
        and elapsed < 300
    )
    return ok, (
        f"pickup-completion states recovered={recovered}/16 min support={min(supports):.4f} "
        f"landmark visit ranks={sorted(rank.values())} runtime={elapsed:.1f}s"
    )


def criterion_9():
    setup = harness.make_setup(harness.ExperimentConfig())
    env = setup.env
    params = LearnerParams(alpha=0.1, gamma=0.9, epsilon=0.1, episodes=300, max_steps=1000, seed=9)
    start = setup.eval_starts[0]
    q_flat, flat = train(env, params, start)
    res = hrl.smdp_train(env, None, hrl.primitive_options(env), params, start, include_primitives=False)
    same_q = np.array_equal(res.q, q_flat.values)
    same_eps = all(np.array_equal(a.states, b.states) for a, b in zip(res.records, flat))
    return same_q and same_eps, f"tables identical={same_q} trajectories identical={same_eps}"


CRITERIA = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9,
}


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_acceptance(n):
    ok, detail = CRITERIA[n]()
    report(n, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    for n in sorted(CRITERIA):
        report(n, *CRITERIA[n]())
