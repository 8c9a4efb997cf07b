"""Tabular episodic testbeds: key-press mazes, the phase maze and taxi.

Every environment is an immutable description.  States are the integer
codes produced by :mod:`subgoal_hierarchy.codec`; dense tables used by the
kernels are indexed by ``code - codec.offset``.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from . import codec
from .codec import DomainSpec

Cell = tuple[int, int]

UP, RIGHT, DOWN, LEFT, PRESS = range(5)
MOVES: dict[int, Cell] = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1)}
SUPPORT = 5  # max distinct outcomes of one (state, action)

LABEL_GLYPHS = set(string.digits + string.ascii_letters) - {"T"}


class MapError(ValueError):
    pass


class ActionError(ValueError):
    pass


class StepOutcome(NamedTuple):
    next_state: int
    reward: float
    terminal: bool


class Tables(NamedTuple):
    """Dense model: ``next[s, a, k]`` with cumulative probability ``cum``."""

    next: np.ndarray
    cum: np.ndarray
    reward: np.ndarray
    terminal: np.ndarray


def slip_distribution(intended: int, slip: float) -> dict[int, float]:
    """Intended move keeps ``1 - slip``; ``slip`` spreads uniformly over all four."""
    probs = {d: slip / 4.0 for d in MOVES}
    probs[intended] += 1.0 - slip
    return {d: p for d, p in probs.items() if p > 0.0}


# ----------------------------------------------------------------------------
# ASCII maps


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    walls: frozenset[Cell] = frozenset()
    subgoals: tuple[tuple[str, Cell], ...] = ()
    goal_cells: tuple[Cell, ...] = ()

    def __post_init__(self):
        cells = set(self.walls) | {c for _, c in self.subgoals} | set(self.goal_cells)
        for r, c in cells:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise MapError(f"cell {(r, c)} outside {self.height}x{self.width}")
        for label, c in self.subgoals:
            if c in self.walls:
                raise MapError(f"subgoal {label!r} sits on a wall")
        labels = [label for label, _ in self.subgoals]
        if len(set(labels)) != len(labels):
            raise MapError("duplicate subgoal labels")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def cell_index(self, cell: Cell) -> int:
        """1-based row-major cell number."""
        return cell[0] * self.width + cell[1] + 1

    def cell_at(self, index: int) -> Cell:
        return divmod(index - 1, self.width)

    def open_cells(self) -> list[Cell]:
        return [
            (r, c)
            for r in range(self.height)
            for c in range(self.width)
            if (r, c) not in self.walls
        ]

    def subgoal_cell(self, label: str) -> Cell:
        for lab, cell in self.subgoals:
            if lab == label:
                return cell
        raise KeyError(label)


def load_map(text: str) -> GridMap:
    rows = [line.rstrip("\r") for line in text.strip("\n").split("\n")]
    rows = [r for r in rows if r.strip()]
    if not rows:
        raise MapError("empty map")
    width = len(rows[0])
    walls, subgoals, goals = set(), [], []
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MapError(f"row {r} has length {len(row)}, expected {width}")
        for c, ch in enumerate(row):
            if ch == "#":
                walls.add((r, c))
            elif ch == "T":
                goals.append((r, c))
            elif ch in LABEL_GLYPHS:
                subgoals.append((ch, (r, c)))
            elif ch != ".":
                raise MapError(f"unknown glyph {ch!r} at row {r}, column {c}")
    subgoals.sort(key=lambda lc: lc[0])
    return GridMap(width, len(rows), frozenset(walls), tuple(subgoals), tuple(goals))


def render_map(grid: GridMap) -> str:
    canvas = [["."] * grid.width for _ in range(grid.height)]
    for r, c in grid.walls:
        canvas[r][c] = "#"
    for r, c in grid.goal_cells:
        canvas[r][c] = "T"
    for label, (r, c) in grid.subgoals:
        canvas[r][c] = label
    return "\n".join("".join(row) for row in canvas) + "\n"


def open_grid(width: int, height: int, subgoals: Sequence[tuple[str, Cell]] = ()) -> GridMap:
    return GridMap(width, height, frozenset(), tuple(subgoals), ())


# ----------------------------------------------------------------------------
# common tabular interface


class TabularEnv:
    """Base class: subclasses provide ``codec``, ``actions`` and ``_outcomes``."""

    codec: DomainSpec
    actions: tuple[str, ...]
    goal_reward: float

    @property
    def n_states(self) -> int:
        return self.codec.size

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def states(self) -> Iterator[int]:
        return iter(range(self.codec.offset, self.codec.max_code + 1))

    def index(self, state: int) -> int:
        return codec.to_index(self.codec, state)

    def state(self, index: int) -> int:
        return codec.from_index(self.codec, index)

    def decode(self, state: int) -> tuple[int, ...]:
        return codec.decode(self.codec, state)

    def _check(self, state: int, action: int) -> None:
        if not 0 <= action < self.n_actions:
            raise ActionError(f"action {action} not in 0..{self.n_actions - 1}")
        if not self.codec.offset <= state <= self.codec.max_code:
            raise codec.CodecError(f"state {state} outside the state space")

    def _outcomes(self, state: int, action: int) -> list[tuple[int, float, float, bool]]:
        raise NotImplementedError

    def _merged(self, state: int, action: int) -> list[tuple[int, float, float, bool]]:
        self._check(state, action)
        merged: dict[int, list] = {}
        for nxt, p, r, term in self._outcomes(state, action):
            if nxt in merged:
                merged[nxt][0] += p
            else:
                merged[nxt] = [p, r, term]
        return [(s, p, r, t) for s, (p, r, t) in merged.items()]

    def transition_distribution(self, state: int, action: int) -> list[tuple[int, float]]:
        return [(s, p) for s, p, _, _ in self._merged(state, action)]

    def reward(self, state: int, action: int, next_state: int) -> float:
        for s, _, r, _ in self._merged(state, action):
            if s == next_state:
                return r
        raise ValueError(f"{next_state} is not reachable from {state} via {action}")

    def is_terminal(self, state: int, action: int, next_state: int) -> bool:
        for s, _, _, t in self._merged(state, action):
            if s == next_state:
                return t
        raise ValueError(f"{next_state} is not reachable from {state} via {action}")

    def sample_step(self, state: int, action: int, rng: np.random.Generator) -> StepOutcome:
        outcomes = self._merged(state, action)
        u = rng.random()
        acc = 0.0
        for s, p, r, t in outcomes:
            acc += p
            if u < acc:
                return StepOutcome(s, r, t)
        s, _, r, t = outcomes[-1]
        return StepOutcome(s, r, t)

    @cached_property
    def tables(self) -> Tables:
        n, m = self.n_states, self.n_actions
        nxt = np.zeros((n, m, SUPPORT), dtype=np.int64)
        cum = np.ones((n, m, SUPPORT), dtype=np.float64)
        rew = np.zeros((n, m, SUPPORT), dtype=np.float64)
        term = np.zeros((n, m, SUPPORT), dtype=np.bool_)
        for i in range(n):
            s = self.state(i)
            for a in range(m):
                outs = self._merged(s, a)
                acc = 0.0
                for k, (s2, p, r, t) in enumerate(outs):
                    acc += p
                    nxt[i, a, k] = self.index(s2)
                    cum[i, a, k] = acc
                    rew[i, a, k] = r
                    term[i, a, k] = t
                last = len(outs) - 1
                cum[i, a, last:] = 1.0
                nxt[i, a, last + 1:] = nxt[i, a, last]
                rew[i, a, last + 1:] = rew[i, a, last]
                term[i, a, last + 1:] = term[i, a, last]
        return Tables(nxt, cum, rew, term)

    def successors(self, state: int) -> set[int]:
        return {s for a in range(self.n_actions) for s, _ in self.transition_distribution(state, a)}

    def infer_action(self, state: int, next_state: int) -> int | None:
        """Most likely action explaining ``state -> next_state`` (lowest id on ties)."""
        best, best_p = None, 0.0
        for a in range(self.n_actions):
            for s, p in self.transition_distribution(state, a):
                if s == next_state and p > best_p + 1e-12:
                    best, best_p = a, p
        return best


# ----------------------------------------------------------------------------
# key-press / phase / goal mazes


@dataclass(frozen=True)
class ProgressSpec:
    """Which subgoal labels advance progress at each level.

    ``chain`` has one admissible order; ``tree`` accepts several orders of equal
    length, and at level ``p`` any label found at position ``p`` of some
    order advances progress.
    """

    mode: str = "chain"
    admissible_orders: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        if self.mode not in ("chain", "tree"):
            raise ValueError(f"unknown progress mode {self.mode!r}")
        orders = self.admissible_orders
        if self.mode == "chain" and len(orders) != 1:
            raise ValueError("chain progress needs exactly one admissible order")
        if self.mode == "tree":
            if not orders or len({len(o) for o in orders}) != 1:
                raise ValueError("tree orders must be non-empty and of equal length")
            position: dict[str, int] = {}
            for o in orders:
                for p, label in enumerate(o):
                    if position.setdefault(label, p) != p:
                        raise ValueError(f"label {label!r} appears at two levels")

    @property
    def levels(self) -> int:
        return len(self.admissible_orders[0]) if self.admissible_orders else 0

    def level_labels(self, progress: int) -> frozenset[str]:
        return frozenset(o[progress] for o in self.admissible_orders)

    @classmethod
    def chain(cls, labels: Sequence[str]) -> "ProgressSpec":
        return cls("chain", (tuple(labels),))


class MazeState(NamedTuple):
    position: Cell
    progress: int


@dataclass(frozen=True)
class KeyMaze(TabularEnv):
    """Grid maze whose progress advances by pressing at subgoal cells.

    ``scheme`` selects the reward model:

    * ``"key"``: moves -1, a press that advances progress 0, any other press
      -10, press at the goal with full progress +10 and terminal.
    * ``"phase"``: every action -1, press (``enter``) at the next subgoal moves
      to the next phase, entering the goal cell with full progress +10.
    * ``"goal"``: four moves only, 0 everywhere, entering the goal +10.
    """

    grid: GridMap
    progress: ProgressSpec
    goal: Cell
    scheme: str = "key"
    slip: float = 0.2
    factored: bool = True
    goal_reward: float = 10.0
    press_penalty: float = -10.0
    step_reward: float = -1.0
    codec: DomainSpec = field(init=False)
    actions: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        if self.scheme not in ("key", "phase", "goal"):
            raise ValueError(f"unknown reward scheme {self.scheme!r}")
        if self.goal in self.grid.walls:
            raise MapError("goal on a wall")
        levels = self.progress.levels
        n = self.grid.n_cells
        spec = DomainSpec((n, levels + 1)) if self.factored else DomainSpec((n * (levels + 1),))
        object.__setattr__(self, "codec", spec)
        if self.scheme == "goal":
            acts = ("up", "right", "down", "left")
        elif self.scheme == "phase":
            acts = ("up", "right", "down", "left", "enter")
        else:
            acts = ("up", "right", "down", "left", "press")
        object.__setattr__(self, "actions", acts)

    def encode(self, position: Cell, progress: int = 0) -> int:
        cell = self.grid.cell_index(position)
        if self.factored:
            return codec.encode(self.codec, (cell, progress + 1))
        return codec.encode(self.codec, (cell + self.grid.n_cells * progress,))

    def describe(self, state: int) -> MazeState:
        if self.factored:
            cell, p = codec.decode(self.codec, state)
            return MazeState(self.grid.cell_at(cell), p - 1)
        (flat,) = codec.decode(self.codec, state)
        p, cell = divmod(flat - 1, self.grid.n_cells)
        return MazeState(self.grid.cell_at(cell + 1), p)

    def _move(self, cell: Cell, direction: int) -> Cell:
        dr, dc = MOVES[direction]
        r, c = cell[0] + dr, cell[1] + dc
        if not (0 <= r < self.grid.height and 0 <= c < self.grid.width):
            return cell
        if (r, c) in self.grid.walls:
            return cell
        return (r, c)

    def _label_at(self, cell: Cell) -> str | None:
        for label, c in self.grid.subgoals:
            if c == cell:
                return label
        return None

    def _outcomes(self, state, action):
        pos, prog = self.describe(state)
        levels = self.progress.levels
        if action in MOVES:
            out = []
            for d, p in slip_distribution(action, self.slip).items():
                nxt = self._move(pos, d)
                if self.scheme == "key":
                    out.append((self.encode(nxt, prog), p, self.step_reward, False))
                elif self.scheme == "phase":
                    done = nxt == self.goal and prog == levels
                    r = self.step_reward + (self.goal_reward if done else 0.0)
                    out.append((self.encode(nxt, prog), p, r, done))
                else:
                    done = nxt == self.goal
                    out.append((self.encode(nxt, prog), p, self.goal_reward if done else 0.0, done))
            return out
        # press / enter never moves the agent
        label = self._label_at(pos)
        advances = label is not None and prog < levels and label in self.progress.level_labels(prog)
        if self.scheme == "key":
            if pos == self.goal and prog == levels:
                return [(state, 1.0, self.goal_reward, True)]
            if advances:
                return [(self.encode(pos, prog + 1), 1.0, 0.0, False)]
            return [(state, 1.0, self.press_penalty, False)]
        return [(self.encode(pos, prog + advances), 1.0, self.step_reward, False)]

    def start_state(self, position: Cell) -> int:
        return self.encode(position, 0)

    def position_index(self, state: int) -> int:
        """0-based row-major cell of a state, for visit matrices."""
        pos = self.describe(state).position
        return pos[0] * self.grid.width + pos[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.grid.height, self.grid.width)


def phase_maze(goal: Cell = (4, 0), slip: float = 0.0) -> KeyMaze:
    """60-state three-phase maze: 4 columns x 5 rows x 3 phases.

    States are numbered ``cell + 20 * phase`` (1..60); ``enter`` at s7 moves to
    phase two and ``enter`` at s34 to phase three.
    """
    grid = GridMap(4, 5, frozenset(), (("1", (1, 2)), ("2", (3, 1))), ())
    return KeyMaze(grid, ProgressSpec.chain("12"), goal, scheme="phase", slip=slip, factored=False)


# ----------------------------------------------------------------------------
# taxi


LANDMARKS_5 = {"R": (0, 0), "G": (0, 4), "Y": (4, 0), "B": (4, 3)}
LANDMARK_ORDER = ("R", "G", "Y", "B")
IN_TAXI = 4
# thin walls east of these cells in the 5x5 map
_EAST_WALLS_5 = [(0, 1), (1, 1), (3, 0), (4, 0), (3, 2), (4, 2)]

NORTH, SOUTH, EAST, WEST, PICKUP, PUTDOWN = range(6)
_TAXI_DIR = {NORTH: UP, SOUTH: DOWN, EAST: RIGHT, WEST: LEFT}


class TaxiState(NamedTuple):
    position: Cell
    passenger: int  # 0..3 landmark, 4 in taxi
    destination: int


@dataclass(frozen=True)
class Taxi(TabularEnv):
    """Dietterich's taxi, optionally scaled; factored as (cell, passenger, destination)."""

    passenger: int = 0
    destination: int = 1
    scale: int = 1
    slip: float = 0.2
    goal_reward: float = 20.0
    codec: DomainSpec = field(init=False)
    actions: tuple[str, ...] = ("north", "south", "east", "west", "pickup", "putdown")

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        object.__setattr__(self, "codec", DomainSpec((self.size * self.size, 5, 4)))

    @property
    def size(self) -> int:
        return 5 * self.scale

    @property
    def shape(self) -> tuple[int, int]:
        return (self.size, self.size)

    @cached_property
    def landmarks(self) -> tuple[Cell, ...]:
        k = self.scale
        return tuple((LANDMARKS_5[n][0] * k, LANDMARKS_5[n][1] * k) for n in LANDMARK_ORDER)

    @cached_property
    def blocked(self) -> frozenset[frozenset[Cell]]:
        k, out = self.scale, set()
        for r5, c5 in _EAST_WALLS_5:
            for r in range(r5 * k, r5 * k + k):
                a, b = (r, c5 * k + k - 1), (r, c5 * k + k)
                out.add(frozenset((a, b)))
        return frozenset(out)

    def encode(self, position: Cell, passenger: int, destination: int) -> int:
        cell = position[0] * self.size + position[1] + 1
        return codec.encode(self.codec, (cell, passenger + 1, destination + 1))

    def describe(self, state: int) -> TaxiState:
        cell, p, d = codec.decode(self.codec, state)
        return TaxiState(divmod(cell - 1, self.size), p - 1, d - 1)

    def _move(self, cell: Cell, direction: int) -> Cell:
        dr, dc = MOVES[direction]
        r, c = cell[0] + dr, cell[1] + dc
        if not (0 <= r < self.size and 0 <= c < self.size):
            return cell
        if frozenset((cell, (r, c))) in self.blocked:
            return cell
        return (r, c)

    def _outcomes(self, state, action):
        pos, p, d = self.describe(state)
        if action in _TAXI_DIR:
            return [
                (self.encode(self._move(pos, direction), p, d), prob, -1.0, False)
                for direction, prob in slip_distribution(_TAXI_DIR[action], self.slip).items()
            ]
        if action == PICKUP:
            if p != IN_TAXI and pos == self.landmarks[p]:
                return [(self.encode(pos, IN_TAXI, d), 1.0, -1.0, False)]
            return [(state, 1.0, -10.0, False)]
        if p == IN_TAXI and pos == self.landmarks[d]:
            return [(self.encode(pos, d, d), 1.0, self.goal_reward, True)]
        return [(state, 1.0, -10.0, False)]

    def start_state(self, position: Cell) -> int:
        return self.encode(position, self.passenger, self.destination)

    def position_index(self, state: int) -> int:
        pos = self.describe(state).position
        return pos[0] * self.size + pos[1]

    def pickup_completion_states(self) -> list[int]:
        """States right after a successful pick-up, one per (landmark, destination)."""
        return [
            self.encode(self.landmarks[p], IN_TAXI, d)
            for p in range(4)
            for d in range(4)
        ]
