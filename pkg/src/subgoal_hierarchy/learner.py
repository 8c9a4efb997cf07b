"""Flat tabular Q-learning, trajectory selection and greedy rollouts."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .envs import TabularEnv


@dataclass(frozen=True)
class LearnerParams:
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon: float = 0.1
    episodes: int = 500
    max_steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.episodes < 0 or self.max_steps < 1:
            raise ValueError("episodes must be >= 0 and max_steps >= 1")


class QTable:
    """Dense action values indexed by encoded state and action."""

    def __init__(self, n_states: int, n_actions: int, offset: int = 0, values=None):
        self.offset = offset
        if values is None:
            values = np.zeros((n_states, n_actions), dtype=np.float64)
        self.values = values

    @classmethod
    def for_env(cls, env: TabularEnv) -> "QTable":
        return cls(env.n_states, env.n_actions, env.codec.offset)

    def __getitem__(self, key: tuple[int, int]) -> float:
        s, a = key
        return float(self.values[s - self.offset, a])

    def __setitem__(self, key: tuple[int, int], value: float) -> None:
        s, a = key
        self.values[s - self.offset, a] = value

    def greedy(self, state: int) -> int:
        return int(np.argmax(self.values[state - self.offset]))

    def policy(self) -> np.ndarray:
        """Greedy action per table row, lowest action id on ties."""
        return np.argmax(self.values, axis=1).astype(np.int64)

    def copy(self) -> "QTable":
        return QTable(0, 0, self.offset, self.values.copy())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "action", "value"])
            for i, row in enumerate(self.values):
                for a, v in enumerate(row):
                    if v != 0.0:
                        w.writerow([i + self.offset, a, repr(float(v))])


@dataclass
class EpisodeRecord:
    index: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    reached_goal: bool

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    @property
    def steps(self) -> int:
        return int(self.actions.shape[0])


class Trajectory(NamedTuple):
    states: tuple[int, ...]
    actions: tuple[int, ...]
    source: int = 0


class Buffers:
    def __init__(self, max_steps: int):
        self.s = np.zeros(max_steps + 1, dtype=np.int64)
        self.a = np.zeros(max_steps, dtype=np.int64)
        self.r = np.zeros(max_steps, dtype=np.float64)
        self.dec = np.zeros(max_steps, dtype=np.int64)

    def record(self, index: int, steps: int, reached: bool, offset: int) -> EpisodeRecord:
        return EpisodeRecord(
            index,
            self.s[: steps + 1] + offset,
            self.a[:steps].copy(),
            self.r[:steps].copy(),
            bool(reached),
        )


def _everywhere(env: TabularEnv):
    region = np.ones(env.n_states, dtype=np.bool_)
    exits = np.zeros((env.n_states, env.n_actions), dtype=np.bool_)
    return region, exits


def train(
    env: TabularEnv,
    params: LearnerParams,
    start: int | Sequence[int],
    q: QTable | None = None,
) -> tuple[QTable, list[EpisodeRecord]]:
    """Epsilon-greedy Q-learning; ``start`` may be one state or a list drawn per episode."""
    tables = env.tables
    q = q if q is not None else QTable.for_env(env)
    rng = np.random.default_rng(params.seed)
    region, exits = _everywhere(env)
    buf = Buffers(params.max_steps)
    starts = [start] if isinstance(start, (int, np.integer)) else list(start)
    records = []
    for ep in range(params.episodes):
        s0 = starts[0] if len(starts) == 1 else starts[int(rng.integers(len(starts)))]
        u = rng.random((params.max_steps, 3))
        steps, reached = _kernels.q_episode(
            q.values, tables.next, tables.cum, tables.reward, tables.terminal,
            region, exits, 0.0, env.index(s0), params.alpha, params.gamma,
            params.epsilon, u, params.max_steps, buf.s, buf.a, buf.r, True,
        )
        records.append(buf.record(ep, steps, reached, env.codec.offset))
    return q, records


def replay_updates(env: TabularEnv, records: Sequence[EpisodeRecord], params: LearnerParams) -> QTable:
    """Re-apply the Q-learning update along recorded episodes."""
    q = QTable.for_env(env)
    v = q.values
    off = env.codec.offset
    for rec in records:
        for t in range(rec.steps):
            s, a, s2 = rec.states[t] - off, rec.actions[t], rec.states[t + 1] - off
            r = rec.rewards[t]
            terminal = rec.reached_goal and t == rec.steps - 1
            if terminal:
                target = r
            else:
                target = r + params.gamma * v[s2, _kernels.argmax_row(v[s2])]
            v[s, a] += params.alpha * (target - v[s, a])
    return q


def select_successful_trajectories(records: Sequence[EpisodeRecord], k: int) -> list[Trajectory]:
    """The ``k`` goal-reaching episodes with the highest return.

    Ties keep the earlier episode.  An empty list means no episode succeeded.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    winners = sorted(
        (r for r in records if r.reached_goal),
        key=lambda r: (-r.total_reward, r.index),
    )[:k]
    return [
        Trajectory(tuple(int(s) for s in r.states), tuple(int(a) for a in r.actions), r.index)
        for r in winners
    ]


def greedy_rollout(
    env: TabularEnv,
    q: QTable,
    start: int,
    rng: np.random.Generator,
    max_steps: int,
) -> EpisodeRecord:
    tables = env.tables
    region, exits = _everywhere(env)
    buf = Buffers(max_steps)
    u = rng.random((max_steps, 3))
    steps, reached = _kernels.policy_episode(
        q.policy(), tables.next, tables.cum, tables.reward, tables.terminal,
        region, exits, env.index(start), u, max_steps, buf.s, buf.a, buf.r,
    )
    return buf.record(0, steps, reached, env.codec.offset)
