"""Options over subtask regions, SMDP Q-learning and the decomposed value."""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .envs import TabularEnv
from .hst import StructureError, Subtask, TaskHierarchy
from .learner import Buffers, EpisodeRecord, LearnerParams, QTable


@dataclass
class OptionPolicy:
    subtask: int
    q: QTable
    region: np.ndarray  # bool[N]
    exits: np.ndarray  # bool[N, A]
    initiation: np.ndarray  # bool[N]
    max_length: int = 0
    priority: float = 0.0
    unreachable: frozenset[int] = frozenset()

    @property
    def policy(self) -> np.ndarray:
        return self.q.policy()


def _masks(env: TabularEnv, subtask: Subtask):
    region = np.zeros(env.n_states, dtype=np.bool_)
    for s in subtask.states:
        region[env.index(s)] = True
    exits = np.zeros((env.n_states, env.n_actions), dtype=np.bool_)
    for e in subtask.exits:
        exits[env.index(e.state), e.action] = True
    return region, exits


def unreachable_states(env: TabularEnv, subtask: Subtask) -> frozenset[int]:
    """States of the region from which no exit pair can be reached inside it."""
    inside = set(subtask.states)
    preds = defaultdict(set)
    for s in inside:
        for a in range(env.n_actions):
            for s2, p in env.transition_distribution(s, a):
                if p > 0 and s2 in inside:
                    preds[s2].add(s)
    good = {e.state for e in subtask.exits if e.state in inside}
    queue = deque(good)
    while queue:
        s = queue.popleft()
        for p in preds[s]:
            if p not in good:
                good.add(p)
                queue.append(p)
    return frozenset(inside - good)


def learn_option(
    env: TabularEnv,
    subtask: Subtask,
    params: LearnerParams,
    bonus: float | None = None,
) -> OptionPolicy:
    """Q-learning confined to the subtask region, rewarded for leaving via an exit.

    Each episode starts from a uniformly drawn region state; executing an
    exit pair adds ``bonus`` (the environment's goal reward by default) and
    ends the episode.
    """
    if not subtask.states or not subtask.exits:
        raise ValueError(f"{subtask.name} needs states and exits")
    region, exits = _masks(env, subtask)
    bonus = env.goal_reward if bonus is None else bonus
    tables = env.tables
    q = QTable.for_env(env)
    rng = np.random.default_rng(params.seed)
    starts = np.flatnonzero(region)
    buf = Buffers(params.max_steps)
    for _ in range(params.episodes):
        s0 = int(starts[rng.integers(len(starts))])
        u = rng.random((params.max_steps, 3))
        _kernels.q_episode(
            q.values, tables.next, tables.cum, tables.reward, tables.terminal,
            region, exits, bonus, s0, params.alpha, params.gamma, params.epsilon,
            u, params.max_steps, buf.s, buf.a, buf.r, True,
        )
    return OptionPolicy(
        subtask.id, q, region, exits, region.copy(),
        priority=subtask.priority,
        unreachable=unreachable_states(env, subtask),
    )


def run_option(
    env: TabularEnv,
    option: OptionPolicy,
    start: int,
    rng: np.random.Generator,
    max_steps: int = 10_000,
) -> EpisodeRecord:
    """Execute an option greedily until it exits or leaves its region."""
    tables = env.tables
    buf = Buffers(max_steps)
    u = rng.random((max_steps, 3))
    steps, reached = _kernels.policy_episode(
        option.policy, tables.next, tables.cum, tables.reward, tables.terminal,
        option.region, option.exits, env.index(start), u, max_steps,
        buf.s, buf.a, buf.r,
    )
    return buf.record(0, steps, reached, env.codec.offset)


def primitive_options(env: TabularEnv) -> list[OptionPolicy]:
    """One length-1 option per primitive action, admissible everywhere."""
    n, m = env.n_states, env.n_actions
    out = []
    for a in range(m):
        values = np.zeros((n, m))
        values[:, a] = 1.0
        out.append(OptionPolicy(
            -1 - a, QTable(n, m, env.codec.offset, values),
            np.ones(n, dtype=np.bool_), np.zeros((n, m), dtype=np.bool_),
            np.ones(n, dtype=np.bool_), max_length=1,
        ))
    return out


@dataclass
class AbstractQ:
    """Per-subtask tables over primitive actions then child subtasks.

    ``admissible`` marks entries defined at a state; others are ignored by
    :func:`decomposed_value`.
    """

    n_primitive: int
    tables: dict[int, np.ndarray] = field(default_factory=dict)
    admissible: dict[int, np.ndarray] = field(default_factory=dict)
    children: dict[int, tuple[int, ...]] = field(default_factory=dict)
    offset: int = 0
    root: np.ndarray | None = None


@dataclass
class SMDPResult:
    q: np.ndarray
    records: list[EpisodeRecord]
    decisions: list[np.ndarray]
    decision_times: list[np.ndarray]
    abstract: AbstractQ | None = None


def _option_arrays(env: TabularEnv, options: Sequence[OptionPolicy]):
    n, m = env.n_states, env.n_actions
    k = len(options)
    pol = np.zeros((k, n), dtype=np.int64)
    reg = np.zeros((k, n), dtype=np.bool_)
    ex = np.zeros((k, n, m), dtype=np.bool_)
    init = np.zeros((k, n), dtype=np.bool_)
    maxlen = np.zeros(k, dtype=np.int64)
    for i, o in enumerate(options):
        pol[i] = o.policy
        reg[i] = o.region
        ex[i] = o.exits
        init[i] = o.initiation
        maxlen[i] = o.max_length
    return pol, reg, ex, init, maxlen


def smdp_train(
    env: TabularEnv,
    hierarchy: TaskHierarchy | None,
    options: Sequence[OptionPolicy],
    params: LearnerParams,
    start: int | Sequence[int],
    include_primitives: bool = True,
    tie_tol: float = 1e-9,
    primitives_everywhere: bool = False,
) -> SMDPResult:
    """SMDP Q-learning over primitives and options.

    Option returns are the discounted sum of their primitive rewards and the
    bootstrap is discounted by ``gamma ** k`` for a k-step option.  Among
    greedy candidates within ``tie_tol`` of the best value, the option with
    the highest rule confidence wins.

    Primitives are offered only in states no option covers (the final
    region, or anywhere options are absent) unless ``primitives_everywhere``.
    """
    tables = env.tables
    n_prim = env.n_actions if include_primitives else 0
    pol, reg, ex, init, maxlen = _option_arrays(env, options)
    priority = np.zeros(n_prim + len(options))
    for i, o in enumerate(options):
        priority[n_prim + i] = o.priority
    q = np.zeros((env.n_states, n_prim + len(options)))
    rng = np.random.default_rng(params.seed)
    buf = Buffers(params.max_steps)
    dec_t = np.zeros(params.max_steps, dtype=np.int64)
    starts = [start] if isinstance(start, (int, np.integer)) else list(start)
    records, decisions, times = [], [], []
    for ep in range(params.episodes):
        s0 = starts[0] if len(starts) == 1 else starts[int(rng.integers(len(starts)))]
        u = rng.random((params.max_steps, 3))
        steps, reached, n_dec = _kernels.smdp_episode(
            q, tables.next, tables.cum, tables.reward, tables.terminal, n_prim,
            pol, reg, ex, init, maxlen, priority, tie_tol,
            not primitives_everywhere, env.index(s0),
            params.alpha, params.gamma, params.epsilon, u, params.max_steps,
            buf.s, buf.a, buf.r, buf.dec, dec_t, True,
        )
        records.append(buf.record(ep, steps, reached, env.codec.offset))
        decisions.append(buf.dec[:n_dec].copy())
        times.append(dec_t[:n_dec].copy())
    result = SMDPResult(q, records, decisions, times)
    if hierarchy is not None:
        result.abstract = abstract_tables(env, hierarchy, options, result, params.gamma)
    return result


def abstract_tables(
    env: TabularEnv,
    hierarchy: TaskHierarchy,
    options: Sequence[OptionPolicy],
    result: SMDPResult,
    gamma: float,
) -> AbstractQ:
    """Per-subtask tables for the decomposed value.

    Primitive columns hold the option's own action values on its region.  A
    child column at state ``s`` holds the mean of ``gamma**k * V_parent(s')``
    over logged invocations of the child from ``s`` that ended in the
    parent's region after ``k`` steps.
    """
    m = env.n_actions
    n_prim = result.q.shape[1] - len(options)
    by_task = {o.subtask: (j, o) for j, o in enumerate(options)}
    aq = AbstractQ(m, offset=env.codec.offset, root=result.q)
    sums = defaultdict(float)
    counts = defaultdict(int)
    for rec, decs, ts in zip(result.records, result.decisions, result.decision_times):
        ends = list(ts[1:]) + [rec.steps]
        for b, t0, t1 in zip(decs, ts, ends):
            if b < n_prim:
                continue
            child = options[b - n_prim].subtask
            s0 = int(rec.states[t0]) - env.codec.offset
            s1 = int(rec.states[t1]) - env.codec.offset
            for t in hierarchy.subtasks:
                if child in t.children and t.id in by_task and by_task[t.id][1].region[s1]:
                    v = by_task[t.id][1].q.values[s1].max()
                    sums[(t.id, child, s0)] += gamma ** (t1 - t0) * v
                    counts[(t.id, child, s0)] += 1
    for t in hierarchy.subtasks:
        kids = t.children
        table = np.zeros((env.n_states, m + len(kids)))
        ok = np.zeros_like(table, dtype=np.bool_)
        if t.id in by_task:
            o = by_task[t.id][1]
            table[:, :m] = o.q.values
            ok[:, :m] = o.region[:, None]
        for j, c in enumerate(kids):
            for (ti, ci, s0), cnt in counts.items():
                if ti == t.id and ci == c:
                    table[s0, m + j] = sums[(ti, ci, s0)] / cnt
                    ok[s0, m + j] = True
        aq.tables[t.id] = table
        aq.admissible[t.id] = ok
        aq.children[t.id] = kids
    return aq


def decomposed_value(
    hierarchy: TaskHierarchy | None,
    abstract_q: AbstractQ,
    subtask: int,
    state: int,
    _stack: tuple[int, ...] = (),
) -> float:
    """``V_i(s) = max_a [V_child(a)(s) + Q_i(s, a)]``; primitives contribute no child value."""
    if subtask in _stack:
        raise StructureError(f"cycle through T{subtask}")
    stack = _stack + (subtask,)
    s = state - abstract_q.offset
    table = abstract_q.tables[subtask]
    ok = abstract_q.admissible[subtask]
    m = abstract_q.n_primitive
    best = -np.inf
    for a in range(table.shape[1]):
        if not ok[s, a]:
            continue
        if a < m:
            v = table[s, a]
        else:
            child = abstract_q.children[subtask][a - m]
            v = decomposed_value(hierarchy, abstract_q, child, state, stack) + table[s, a]
        best = max(best, v)
    if best == -np.inf:
        raise ValueError(f"no admissible action for T{subtask} at s{state}")
    return float(best)
