"""Sequential association rules over trajectory transactions.

Transactions are the distinct states of a successful trajectory, each with
the time step of its first visit.  Frequent itemsets come from FP-growth;
rules are built from maximal frequent itemsets and ordered by first-visit
time, so the consequent is always the subgoal reached last.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

_EPS = 1e-12


@dataclass(frozen=True)
class Transaction:
    items: frozenset[int]
    first_occurrence: dict[int, int] = field(compare=False, hash=False)
    source_id: int = 0

    def ordered(self, items: Iterable[int]) -> tuple[int, ...]:
        return tuple(sorted(items, key=lambda i: (self.first_occurrence[i], i)))


@dataclass(frozen=True)
class FrequentItemset:
    items: frozenset[int]
    count: int
    support: float


@dataclass(frozen=True)
class SequentialRule:
    premise: tuple[int, ...]
    consequent: int
    support: float
    confidence: float
    order_frequency: int

    @property
    def sequence(self) -> tuple[int, ...]:
        return self.premise + (self.consequent,)

    def __str__(self) -> str:
        prem = ",".join(f"s{s}" for s in self.premise)
        return f"{prem} -> s{self.consequent} (sup={self.support:.4g}, conf={self.confidence:.4g}, n={self.order_frequency})"


def trajectories_to_transactions(trajectories: Sequence[Sequence[int]]) -> list[Transaction]:
    out = []
    skipped = 0
    for k, traj in enumerate(trajectories):
        if len(traj) == 0:
            skipped += 1
            continue
        first: dict[int, int] = {}
        for t, s in enumerate(traj):
            first.setdefault(int(s), t)
        out.append(Transaction(frozenset(first), first, k))
    if skipped:
        log.warning("skipped %d empty trajectories", skipped)
    return out


def _meets(count: int, n: int, threshold: float) -> bool:
    return count / n >= threshold - _EPS


# ----------------------------------------------------------------------------
# FP-tree


class FPNode:
    __slots__ = ("item", "count", "parent", "children", "link")

    def __init__(self, item, parent):
        self.item = item
        self.count = 0
        self.parent = parent
        self.children: dict[int, FPNode] = {}
        self.link: FPNode | None = None


class FPTree:
    """Prefix tree over weighted item paths; items ordered by descending count."""

    def __init__(self, paths: Iterable[tuple[Sequence[int], int]], min_count: int):
        paths = list(paths)
        counts: Counter = Counter()
        for items, w in paths:
            for i in items:
                counts[i] += w
        self.counts = {i: c for i, c in counts.items() if c >= min_count}
        # rank: descending count, ties by ascending item id
        order = sorted(self.counts, key=lambda i: (-self.counts[i], i))
        self.rank = {i: r for r, i in enumerate(order)}
        self.root = FPNode(None, None)
        self.heads: dict[int, FPNode] = {}
        self._tails: dict[int, FPNode] = {}
        for items, w in paths:
            kept = sorted((i for i in set(items) if i in self.rank), key=self.rank.__getitem__)
            self._insert(kept, w)

    def _insert(self, items, weight):
        node = self.root
        for i in items:
            child = node.children.get(i)
            if child is None:
                child = FPNode(i, node)
                node.children[i] = child
                if i in self._tails:
                    self._tails[i].link = child
                else:
                    self.heads[i] = child
                self._tails[i] = child
            child.count += weight
            node = child

    def nodes(self, item: int):
        node = self.heads.get(item)
        while node is not None:
            yield node
            node = node.link

    def prefix_paths(self, item: int) -> list[tuple[list[int], int]]:
        out = []
        for node in self.nodes(item):
            path = []
            p = node.parent
            while p is not None and p.item is not None:
                path.append(p.item)
                p = p.parent
            if path:
                out.append((path[::-1], node.count))
        return out

    def single_path(self) -> list[FPNode] | None:
        path = []
        node = self.root
        while node.children:
            if len(node.children) > 1:
                return None
            node = next(iter(node.children.values()))
            path.append(node)
        return path


def _mine(tree: FPTree, suffix: frozenset, min_count: int, out: dict) -> None:
    # least frequent first
    for item in sorted(tree.counts, key=lambda i: -tree.rank[i]):
        pattern = suffix | {item}
        out[pattern] = tree.counts[item]
        cond = FPTree(tree.prefix_paths(item), min_count)
        if cond.counts:
            _mine(cond, pattern, min_count, out)


def fp_growth(transactions: Sequence[Transaction], minsup: float) -> list[FrequentItemset]:
    """All itemsets whose support ``count / N`` is at least ``minsup``."""
    if not 0.0 < minsup <= 1.0:
        raise ValueError(f"minsup must lie in (0, 1], got {minsup}")
    n = len(transactions)
    if n == 0:
        return []
    min_count = next(c for c in range(n + 1) if _meets(c, n, minsup))
    min_count = max(min_count, 1)
    tree = FPTree(((t.items, 1) for t in transactions), min_count)
    found: dict[frozenset, int] = {}
    _mine(tree, frozenset(), min_count, found)
    return sorted(
        (FrequentItemset(items, c, c / n) for items, c in found.items()),
        key=lambda f: (len(f.items), sorted(f.items)),
    )


# ----------------------------------------------------------------------------
# rules


def count_containing(items: Iterable[int], transactions: Sequence[Transaction]) -> int:
    items = frozenset(items)
    return sum(1 for t in transactions if items <= t.items)


def rule_support(premise: Iterable[int], consequent: Iterable[int], transactions: Sequence[Transaction]) -> float:
    both = frozenset(premise) | frozenset(consequent)
    return count_containing(both, transactions) / len(transactions)


def rule_confidence(
    premise: Iterable[int],
    consequent: Iterable[int],
    transactions: Sequence[Transaction],
    sequential: bool = False,
) -> float:
    """``sigma(A u B) / sigma(A)``; with ``sequential`` every item of A must precede B."""
    a, b = frozenset(premise), frozenset(consequent)
    base = count_containing(a, transactions)
    if base == 0:
        return 0.0
    if not sequential:
        return count_containing(a | b, transactions) / base
    hits = 0
    for t in transactions:
        if a | b <= t.items:
            if max(t.first_occurrence[i] for i in a) < min(t.first_occurrence[i] for i in b):
                hits += 1
    return hits / base


def maximal_itemsets(frequents: Sequence[FrequentItemset]) -> list[FrequentItemset]:
    by_size = sorted(frequents, key=lambda f: -len(f.items))
    kept: list[FrequentItemset] = []
    for f in by_size:
        if not any(f.items < g.items for g in kept):
            kept.append(f)
    return sorted(kept, key=lambda f: (len(f.items), sorted(f.items)))


def order_premise(items: Iterable[int], transactions: Sequence[Transaction]) -> list[tuple[tuple[int, ...], int]]:
    """Distinct first-visit orderings of ``items`` among supporting transactions.

    Returns ``(ordering, frequency)`` pairs, most frequent first, ties by the
    ordering itself.
    """
    items = frozenset(items)
    seen: Counter = Counter()
    for t in transactions:
        if items <= t.items:
            seen[t.ordered(items)] += 1
    return sorted(seen.items(), key=lambda kv: (-kv[1], kv[0]))


def generate_rules(
    frequents: Sequence[FrequentItemset],
    transactions: Sequence[Transaction],
    minconf: float,
) -> list[SequentialRule]:
    """Single-consequent sequential rules from the maximal frequent itemsets."""
    n = len(transactions)
    rules = []
    for f in maximal_itemsets(frequents):
        if len(f.items) < 2:
            continue
        for ordering, freq in order_premise(f.items, transactions):
            premise, consequent = ordering[:-1], ordering[-1]
            base = count_containing(premise, transactions)
            conf = f.count / base
            if conf >= minconf - _EPS:
                rules.append(SequentialRule(premise, consequent, f.count / n, conf, freq))
    return sort_rules(rules)


def sort_rules(rules: Iterable[SequentialRule]) -> list[SequentialRule]:
    """Canonical order: confidence desc, support desc, order frequency desc, items."""
    return sorted(rules, key=lambda r: (-r.confidence, -r.support, -r.order_frequency, r.sequence))


def candidate_rule_count(d: int) -> int:
    """Number of rules ``A -> B`` over ``d`` items with A, B non-empty and disjoint."""
    if d < 1:
        raise ValueError("d must be >= 1")
    value = 3**d - 2 ** (d + 1) + 1
    if value > 2**63 - 1:
        raise OverflowError(f"rule count for d={d} exceeds 64 bits")
    return value


def subgoals_of(rules: Iterable[SequentialRule]) -> set[int]:
    return {s for r in rules for s in r.sequence}


def cluster_adjacent_subgoals(
    subgoals: Iterable[int],
    transactions: Sequence[Transaction],
    window: int,
) -> list[tuple[int, ...]]:
    """Merge subgoals whose first visits lie within ``window`` steps in most transactions.

    Each cluster is ordered by mean first-visit time; its first member is the
    representative.
    """
    if window < 0:
        raise ValueError("window must be >= 0")
    goals = sorted(set(subgoals))
    parent = {g: g for g in goals}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, u in enumerate(goals):
        for v in goals[i + 1:]:
            both = [t for t in transactions if u in t.items and v in t.items]
            if not both:
                continue
            close = sum(
                1 for t in both
                if abs(t.first_occurrence[u] - t.first_occurrence[v]) <= window
            )
            if close * 2 > len(both):
                parent[find(u)] = find(v)

    mean_time = {}
    for g in goals:
        times = [t.first_occurrence[g] for t in transactions if g in t.items]
        mean_time[g] = sum(times) / len(times) if times else float("inf")
    groups = defaultdict(list)
    for g in goals:
        groups[find(g)].append(g)
    clusters = [tuple(sorted(m, key=lambda g: (mean_time[g], g))) for m in groups.values()]
    return sorted(clusters, key=lambda c: (mean_time[c[0]], c[0]))


# ----------------------------------------------------------------------------
# CSV interchange


def write_transactions_csv(path, trajectories: Iterable[Sequence[int]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for traj in trajectories:
            w.writerow([int(s) for s in traj])


def read_transactions_csv(path) -> list[list[int]]:
    with open(path, newline="") as fh:
        return [[int(x) for x in row if x.strip()] for row in csv.reader(fh) if row]


def write_rules_csv(path, rules: Iterable[SequentialRule]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["premise", "consequent", "support", "confidence", "order_freq"])
        for r in rules:
            w.writerow([
                " ".join(str(s) for s in r.premise),
                r.consequent,
                repr(r.support),
                repr(r.confidence),
                r.order_frequency,
            ])


def read_rules_csv(path) -> list[SequentialRule]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        SequentialRule(
            tuple(int(s) for s in row["premise"].split()),
            int(row["consequent"]),
            float(row["support"]),
            float(row["confidence"]),
            int(row["order_freq"]),
        )
        for row in rows
    ]
