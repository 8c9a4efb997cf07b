"""Hierarchical structure tree, exits, subtask regions and consistency checks."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .envs import TabularEnv
from .learner import Trajectory
from .miner import SequentialRule, sort_rules

log = logging.getLogger(__name__)


class StructureError(ValueError):
    pass


# ----------------------------------------------------------------------------
# tree construction


@dataclass
class HSTNode:
    subgoal: int | None = None
    children: list["HSTNode"] = field(default_factory=list)
    confidence: float = 0.0
    terminal: bool = False

    def child(self, subgoal: int) -> "HSTNode | None":
        for c in self.children:
            if c.subgoal == subgoal:
                return c
        return None

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def paths(self) -> set[tuple[int, ...]]:
        """Root-anchored subgoal paths ending at every node."""
        out = set()

        def rec(node, prefix):
            for c in node.children:
                path = prefix + (c.subgoal,)
                out.add(path)
                rec(c, path)

        rec(self, ())
        return out

    def size(self) -> int:
        return sum(1 for _ in self.walk()) - 1


def insert_rule(root: HSTNode, sequence: Sequence[int], confidence: float = 0.0) -> None:
    """Walk from the root along the reversed sequence, branching on the first mismatch."""
    parent = root
    for item in reversed(sequence):
        node = parent.child(item)
        if node is None:
            node = HSTNode(item)
            parent.children.append(node)
        node.confidence = max(node.confidence, confidence)
        parent = node
    parent.terminal = True


def hst_construct(rules: Iterable[SequentialRule | Sequence[int]]) -> HSTNode:
    rules = list(rules)
    root = HSTNode()
    if rules and all(isinstance(r, SequentialRule) for r in rules):
        for r in sort_rules(rules):
            insert_rule(root, r.sequence, r.confidence)
    else:
        for r in rules:
            if isinstance(r, SequentialRule):
                insert_rule(root, r.sequence, r.confidence)
            else:
                insert_rule(root, tuple(r))
    return root


def project_rules(rules: Iterable[SequentialRule], keep: set[int]) -> list[SequentialRule]:
    """Restrict rule sequences to ``keep`` states, dropping rules left empty."""
    out = {}
    for r in rules:
        seq = tuple(s for s in r.sequence if s in keep)
        if not seq:
            continue
        prev = out.get(seq)
        if prev is None or (r.confidence, r.support) > (prev.confidence, prev.support):
            out[seq] = SequentialRule(seq[:-1], seq[-1], r.support, r.confidence, r.order_frequency)
    return sort_rules(out.values())


# ----------------------------------------------------------------------------
# exits


class Exit(NamedTuple):
    state: int
    action: int


def _occurrences(trajectories: Sequence[Trajectory], state: int):
    for traj in trajectories:
        for t, s in enumerate(traj.states):
            if s == state:
                yield traj, t


def _majority(counter: Counter) -> int:
    return min(counter, key=lambda k: (-counter[k], k))


def closure(
    env: TabularEnv,
    seeds: Iterable[int],
    blocked: set[tuple[int, int]],
) -> set[int]:
    """States reachable from ``seeds`` without executing a ``blocked`` pair."""
    seen = set(seeds)
    queue = deque(seen)
    while queue:
        s = queue.popleft()
        for a in range(env.n_actions):
            if (s, a) in blocked:
                continue
            for s2, p in env.transition_distribution(s, a):
                if p > 0 and s2 not in seen:
                    seen.add(s2)
                    queue.append(s2)
    return seen


def extract_exits(
    subgoals: Iterable[int],
    trajectories: Sequence[Trajectory],
    env: TabularEnv | None = None,
) -> list[Exit]:
    """Exit pairs (subgoal, majority action) for mined subgoals.

    A subgoal reached from another subgoal by that subgoal's exit action is
    folded into the earlier exit.  With ``env``, candidates whose resultant
    state stays reachable without executing them are discarded: they do not
    bound a region.
    """
    subgoals = set(subgoals)
    action_of: dict[int, int] = {}
    successor: dict[int, int | None] = {}
    when: dict[int, float] = {}
    for g in sorted(subgoals):
        acts: Counter = Counter()
        times = []
        final_action = None
        for traj, t in _occurrences(trajectories, g):
            times.append(t)
            if t < len(traj.actions):
                acts[traj.actions[t]] += 1
            elif traj.actions:
                final_action = traj.actions[-1]
        if not times:
            continue
        when[g] = sum(times) / len(times)
        if acts:
            action_of[g] = _majority(acts)
        elif final_action is not None:
            action_of[g] = final_action
        else:
            continue
        nxt: Counter = Counter()
        for traj, t in _occurrences(trajectories, g):
            if t < len(traj.actions) and traj.actions[t] == action_of[g]:
                nxt[traj.states[t + 1]] += 1
        successor[g] = _majority(nxt) if nxt else None

    candidates = set(action_of)
    if env is not None:
        changed = True
        while changed:
            changed = False
            blocked = {(g, action_of[g]) for g in candidates}
            for g in sorted(candidates):
                s2 = successor[g]
                if s2 is None or s2 == g or s2 in closure(env, [g], blocked):
                    candidates.discard(g)
                    changed = True
                    break
    absorbed = {successor[g] for g in candidates if successor[g] != g}
    kept = [g for g in candidates if g not in absorbed]
    kept.sort(key=lambda g: (when[g], g))
    return [Exit(g, action_of[g]) for g in kept]


# ----------------------------------------------------------------------------
# subtasks


@dataclass(frozen=True)
class Subtask:
    id: int
    variables: frozenset[int]
    states: frozenset[int]
    exits: tuple[Exit, ...]
    children: tuple[int, ...]
    priority: float = 0.0

    @property
    def name(self) -> str:
        return f"T{self.id}"

    def exit_states(self) -> set[int]:
        return {e.state for e in self.exits}


@dataclass(frozen=True)
class TaskHierarchy:
    subtasks: tuple[Subtask, ...]
    top: tuple[int, ...]
    final_region: frozenset[int]
    n_variables: int = 1
    warnings: int = 0

    def __getitem__(self, i: int) -> Subtask:
        return self.subtasks[i]

    def __len__(self) -> int:
        return len(self.subtasks)

    @property
    def exits(self) -> dict[Exit, int]:
        return {e: t.id for t in self.subtasks for e in t.exits}

    def owner(self, state: int) -> int | None:
        for t in self.subtasks:
            if state in t.states:
                return t.id
        return None

    def edges(self) -> list[tuple[int, int]]:
        return [(t.id, c) for t in self.subtasks for c in t.children]

    def check_acyclic(self) -> None:
        state = {}

        def visit(i):
            if state.get(i) == 1:
                raise StructureError(f"cycle through T{i}")
            if state.get(i) == 2:
                return
            state[i] = 1
            for c in self.subtasks[i].children:
                visit(c)
            state[i] = 2

        for t in self.subtasks:
            visit(t.id)

    def render(self, action_names: Sequence[str] | None = None) -> str:
        def act(a):
            return action_names[a] if action_names else str(a)

        lines = ["root"]

        def rec(i, depth):
            t = self.subtasks[i]
            ex = ", ".join(f"(s{e.state},{act(e.action)})" for e in t.exits)
            vars_ = ",".join(str(v) for v in sorted(t.variables))
            states = _ranges(sorted(t.states))
            lines.append(f"{'  ' * depth}{t.name} exits={ex} X={{{vars_}}} S={{{states}}}")
            for c in t.children:
                rec(c, depth + 1)

        for i in self.top:
            rec(i, 1)
        if self.final_region:
            lines.append(f"  final S={{{_ranges(sorted(self.final_region))}}}")
        return "\n".join(lines) + "\n"

    def adjacency(self) -> str:
        lines = ["# id\tsubgoal\texits\tchildren"]
        lines.append("R\t-\t-\t" + (",".join(f"T{i}" for i in self.top) or "-"))
        for t in self.subtasks:
            sub = ",".join(str(s) for s in sorted(t.exit_states()))
            ex = ",".join(f"{e.state}:{e.action}" for e in t.exits)
            ch = ",".join(f"T{c}" for c in t.children) or "-"
            lines.append(f"{t.name}\t{sub}\t{ex}\t{ch}")
        return "\n".join(lines) + "\n"


def parse_adjacency(text: str) -> dict[str, dict]:
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        node, sub, ex, ch = line.split("\t")
        out[node] = {
            "subgoals": [] if sub == "-" else [int(x) for x in sub.split(",")],
            "exits": [] if ex == "-" else [Exit(*map(int, e.split(":"))) for e in ex.split(",")],
            "children": [] if ch == "-" else ch.split(","),
        }
    return out


def _ranges(values: Sequence[int]) -> str:
    parts = []
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[j + 1] == values[j] + 1:
            j += 1
        parts.append(f"s{values[i]}" if i == j else f"s{values[i]}..s{values[j]}")
        i = j + 1
    return ",".join(parts)


def segment(trajectory: Trajectory, exit_set: set[Exit]):
    """Split a trajectory after every executed exit pair.

    Yields ``(exit_or_None, states, start_index)``; each exit-terminated
    segment ends with the exit state, and the final segment (``None``) holds
    the states after the last exit.
    """
    states, actions = trajectory.states, trajectory.actions
    start = 0
    for t, a in enumerate(actions):
        e = Exit(states[t], a)
        if e in exit_set:
            yield e, states[start:t + 1], start
            start = t + 1
    yield None, states[start:], start


def _changed_variables(states: Sequence[int], decode) -> set[int]:
    out = set()
    for a, b in zip(states, states[1:]):
        for i, (x, y) in enumerate(zip(decode(a), decode(b))):
            if x != y:
                out.add(i + 1)
    return out


def _hst_links(node: HSTNode, exit_states: set[int]):
    """(ancestor exit state, descendant exit state) links, skipping non-exit nodes."""
    links = []

    def rec(n, anchor):
        here = n.subgoal if n.subgoal in exit_states else anchor
        for c in n.children:
            if c.subgoal in exit_states and here is not None and here != c.subgoal:
                links.append((here, c.subgoal))
            rec(c, here)

    rec(node, None)
    return links


def build_hierarchy(
    hst_root: HSTNode,
    exits: Sequence[Exit],
    trajectories: Sequence[Trajectory],
    env: TabularEnv | None = None,
) -> TaskHierarchy:
    """Partition trajectory states into exit-bounded regions, one subtask per region.

    With ``env`` each region is closed under transitions that do not execute
    an exit, and exits whose regions overlap share one subtask.  Without it,
    regions are the observed segment states and a state seen in several
    regions goes to the one where it occurs most often.
    """
    if not exits:
        raise StructureError("build_hierarchy needs at least one exit")
    exit_set = set(exits)
    exit_list = list(exits)
    seg_states: dict[Exit, list[int]] = defaultdict(list)
    seg_paths: dict[Exit, list[tuple[int, ...]]] = defaultdict(list)
    positions: dict[Exit, list[int]] = defaultdict(list)
    final_states: list[int] = []
    for traj in trajectories:
        for k, (e, states, start) in enumerate(segment(traj, exit_set)):
            if e is None:
                final_states.extend(states)
                continue
            seg_states[e].extend(states)
            # include the resultant state to see which variables the exit flips
            end = start + len(states)
            seg_paths[e].append(tuple(traj.states[start:end + 1]))
            positions[e].append(k)

    blocked = {(e.state, e.action) for e in exit_list}
    region: dict[Exit, set[int]] = {}
    for e in exit_list:
        seeds = set(seg_states[e]) | {e.state}
        region[e] = closure(env, seeds, blocked) if env is not None else seeds

    # group exits: with a model, overlapping regions are one subtask
    parent = {e: e for e in exit_list}

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    warnings = 0
    if env is not None:
        for i, e in enumerate(exit_list):
            for f in exit_list[i + 1:]:
                if region[e] & region[f]:
                    parent[find(e)] = find(f)
    groups: dict[Exit, list[Exit]] = defaultdict(list)
    for e in exit_list:
        groups[find(e)].append(e)

    def mean_pos(es):
        ps = [p for e in es for p in positions[e]]
        return sum(ps) / len(ps) if ps else float("inf")

    ordered = sorted(groups.values(), key=lambda es: (mean_pos(es), min(e.state for e in es)))
    states_of: list[set[int]] = []
    for es in ordered:
        states_of.append(set().union(*(region[e] for e in es)))

    if env is None:
        counts: dict[int, Counter] = defaultdict(Counter)
        for gi, es in enumerate(ordered):
            for e in es:
                for s in seg_states[e]:
                    counts[s][gi] += 1
                counts[e.state][gi] += 1
        for s, c in counts.items():
            if len(c) > 1:
                warnings += 1
                winner = min(c, key=lambda g: (-c[g], g))
                for g in c:
                    if g != winner:
                        states_of[g].discard(s)

    sub_of_exit = {e: gi for gi, es in enumerate(ordered) for e in es}

    taken = set().union(*states_of)
    if env is not None and final_states:
        final = closure(env, set(final_states), blocked) - taken
    else:
        final = set(final_states) - taken

    decode = env.decode if env is not None else None
    n_vars = env.codec.variable_count if env is not None else 1
    links = _hst_links(hst_root, {e.state for e in exit_list})
    exit_by_state = defaultdict(list)
    for e in exit_list:
        exit_by_state[e.state].append(e)
    children: dict[int, list[int]] = defaultdict(list)
    for up, down in links:
        for eu in exit_by_state[up]:
            for ed in exit_by_state[down]:
                pu, pd = sub_of_exit[eu], sub_of_exit[ed]
                if pu != pd and pd not in children[pu]:
                    children[pu].append(pd)
    conf = {n.subgoal: n.confidence for n in hst_root.walk() if n.subgoal is not None}

    subtasks = []
    for gi, es in enumerate(ordered):
        if decode is not None and n_vars > 1:
            variables = set()
            for e in es:
                for path in seg_paths[e]:
                    variables |= _changed_variables(path, decode)
        else:
            variables = {1}
        subtasks.append(Subtask(
            gi,
            frozenset(variables),
            frozenset(states_of[gi]),
            tuple(sorted(es, key=lambda e: (e.state, e.action))),
            tuple(sorted(children[gi])),
            max(conf.get(e.state, 0.0) for e in es),
        ))
    subtasks = _break_cycles(subtasks)
    child_ids = {c for t in subtasks for c in t.children}
    top = tuple(t.id for t in subtasks if t.id not in child_ids)
    h = TaskHierarchy(tuple(subtasks), top, frozenset(final), n_vars, warnings)
    h.check_acyclic()
    if warnings:
        log.warning("%d states were seen in more than one region", warnings)
    return h


def _break_cycles(subtasks: list[Subtask]) -> list[Subtask]:
    kids = {t.id: list(t.children) for t in subtasks}
    state: dict[int, int] = {}

    def visit(i):
        state[i] = 1
        for c in list(kids[i]):
            if state.get(c) == 1:
                log.warning("dropping edge T%d -> T%d that closes a cycle", i, c)
                kids[i].remove(c)
            elif c not in state:
                visit(c)
        state[i] = 2

    for t in subtasks:
        if t.id not in state:
            visit(t.id)
    return [
        Subtask(t.id, t.variables, t.states, t.exits, tuple(kids[t.id]), t.priority)
        for t in subtasks
    ]


# ----------------------------------------------------------------------------
# consistency


class Consistency(NamedTuple):
    ok: bool
    segment: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def check_consistency(hierarchy: TaskHierarchy, trajectory: Trajectory) -> Consistency:
    """Does the trajectory segment along the hierarchy's regions and exits?

    Each exit-terminated segment must stay inside the owning subtask's states
    before its final pair, and successive subtasks must follow child-to-parent
    links.  States after the last exit must lie in the final region.
    """
    owners = hierarchy.exits
    prev = None
    k = -1
    for k, (e, states, _) in enumerate(segment(trajectory, set(owners))):
        if e is None:
            if prev is not None and prev not in hierarchy.top:
                return Consistency(False, k, f"trajectory ends inside T{prev}'s parent chain")
            region = hierarchy.final_region
            if prev is None and not region:
                return Consistency(False, k, "no exit executed")
            outside = [s for s in states if s not in region]
            if region and outside:
                return Consistency(False, k, f"s{outside[0]} outside the final region")
            return Consistency(True)
        i = owners[e]
        task = hierarchy[i]
        if prev is not None and prev not in task.children:
            return Consistency(False, k, f"T{i} follows T{prev} but T{prev} is not its child")
        outside = [s for s in states[:-1] if s not in task.states]
        if outside:
            return Consistency(False, k, f"s{outside[0]} outside S of T{i}")
        prev = i
    return Consistency(True)
