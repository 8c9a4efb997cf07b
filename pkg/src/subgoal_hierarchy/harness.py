"""Experiment pipeline: learn, mine, build the hierarchy, compare flat and hierarchical agents."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import hrl, hst, miner
from .envs import KeyMaze, ProgressSpec, TabularEnv, Taxi, load_map, phase_maze
from .learner import LearnerParams, Trajectory, select_successful_trajectories, train

log = logging.getLogger(__name__)

METHODS = ("flat", "hier")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.message = message


# ----------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "maze"  # maze | taxi | golden
    map: str = "chain11"
    order: str = "123"
    scheme: str = "key"
    slip: float = 0.2
    start: str = ""
    taxi_scale: int = 1
    minsup: float = 0.9
    minconf: float = 0.9
    runs: int = 10
    episodes: int = 2000
    max_steps: int = 1000
    top_k: int = 5
    seed: int = 0
    methods: str = "flat,hier"
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon: float = 0.1
    mining_starts: int = 10
    mining_episodes: int = 300
    option_episodes: int = 0  # 0: scale with region size
    option_max_steps: int = 300
    cluster_window: int = 0
    transactions: str = ""

    def __post_init__(self):
        if not (0.0 < self.minsup <= 1.0 and 0.0 < self.minconf <= 1.0):
            raise ConfigError("minsup and minconf must lie in (0, 1]")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.env not in ("maze", "taxi", "golden"):
            raise ConfigError(f"unknown env {self.env!r}")
        bad = set(self.method_list) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}")
        if self.top_k < 1 or self.episodes < 1 or self.max_steps < 1:
            raise ConfigError("top_k, episodes and max_steps must be >= 1")

    @property
    def method_list(self) -> tuple[str, ...]:
        return tuple(m.strip() for m in self.methods.split(",") if m.strip())

    def params(self, seed: int, episodes: int | None = None, max_steps: int | None = None) -> LearnerParams:
        return LearnerParams(
            self.alpha, self.gamma, self.epsilon,
            self.episodes if episodes is None else episodes,
            self.max_steps if max_steps is None else max_steps,
            seed,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {n}: unknown key {key!r}")
            conv = {"int": int, "float": float}.get(types[key], str)
            try:
                values[key] = conv(value)
            except ValueError:
                raise ConfigError(f"line {n}: bad value for {key}: {value!r}") from None
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def data_path(name: str) -> Path:
    return Path(str(resources.files("subgoal_hierarchy") / "data" / name))


def _parse_cell(text: str):
    r, c = (int(x) for x in text.split(","))
    return (r, c)


# ----------------------------------------------------------------------------
# environments and starts


@dataclass
class Setup:
    env: TabularEnv
    mining_starts: list[int]
    eval_starts: list[int]


def make_setup(cfg: ExperimentConfig) -> Setup:
    rng = np.random.default_rng(cfg.seed)
    if cfg.env == "golden":
        env = phase_maze()
        return Setup(env, [], [env.start_state((0, 0))])
    if cfg.env == "taxi":
        base = Taxi(scale=cfg.taxi_scale, slip=cfg.slip)
        starts = []
        for p in range(4):
            for d in range(4):
                cell = (int(rng.integers(base.size)), int(rng.integers(base.size)))
                starts.append(base.encode(cell, p, d))
        return Setup(base, starts, starts)
    path = Path(cfg.map)
    if not path.exists():
        path = data_path(f"{cfg.map}.map")
    if not path.exists():
        raise ConfigError(f"map {cfg.map!r} not found")
    grid = load_map(path.read_text())
    if not grid.goal_cells:
        raise ConfigError("map has no goal cell")
    orders = tuple(tuple(o) for o in cfg.order.split("|"))
    progress = ProgressSpec.chain(orders[0]) if len(orders) == 1 else ProgressSpec("tree", orders)
    goal = grid.goal_cells[0]
    env = KeyMaze(grid, progress, goal, scheme=cfg.scheme, slip=cfg.slip)
    special = set(dict(grid.subgoals).values()) | {goal}
    free = [c for c in grid.open_cells() if c not in special]
    picks = rng.choice(len(free), size=min(cfg.mining_starts, len(free)), replace=False)
    mining = [env.start_state(free[int(i)]) for i in picks]
    start = _parse_cell(cfg.start) if cfg.start else free[0]
    return Setup(env, mining, [env.start_state(start)])


# ----------------------------------------------------------------------------
# stages


def golden_trajectories(env: TabularEnv, path=None) -> list[Trajectory]:
    """Printed state sequences with actions recovered from the model."""
    rows = miner.read_transactions_csv(path or data_path("golden_transactions.csv"))
    out = []
    for k, states in enumerate(rows):
        acts = []
        for s, s2 in zip(states, states[1:]):
            a = env.infer_action(s, s2)
            if a is None:
                raise StageError("learn", f"transition s{s}->s{s2} impossible in the model")
            acts.append(a)
        out.append(Trajectory(tuple(states), tuple(acts), k))
    return out


def learn_stage(cfg: ExperimentConfig, setup: Setup) -> list[Trajectory]:
    """Flat learning from each mining start; keeps the best ``top_k`` successes of each."""
    if cfg.env == "golden":
        return golden_trajectories(setup.env, cfg.transactions or None)
    seeds = np.random.default_rng(cfg.seed).integers(2**31, size=len(setup.mining_starts))
    out: list[Trajectory] = []
    for start, s in zip(setup.mining_starts, seeds):
        _, records = train(setup.env, cfg.params(int(s), cfg.mining_episodes), start)
        for t in select_successful_trajectories(records, cfg.top_k):
            out.append(t._replace(source=len(out)))
    if not out:
        raise StageError("learn", "no successful trajectories; nothing to mine")
    return out


def mine_stage(cfg: ExperimentConfig, trajectories: Sequence[Trajectory]) -> list[miner.SequentialRule]:
    tx = miner.trajectories_to_transactions([t.states for t in trajectories])
    if not tx:
        raise StageError("mine", "no transactions")
    frequent = miner.fp_growth(tx, cfg.minsup)
    return miner.generate_rules(frequent, tx, cfg.minconf)


def build_stage(
    cfg: ExperimentConfig,
    setup: Setup,
    rules: Sequence[miner.SequentialRule],
    trajectories: Sequence[Trajectory],
) -> hst.TaskHierarchy:
    if not rules:
        raise StageError("build-hst", "no rules to build from")
    goals = miner.subgoals_of(rules)
    if cfg.cluster_window > 0:
        tx = miner.trajectories_to_transactions([t.states for t in trajectories])
        clusters = miner.cluster_adjacent_subgoals(goals, tx, cfg.cluster_window)
        goals = {c[0] for c in clusters}
        rules = hst.project_rules(rules, goals)
    exits = hst.extract_exits(goals, trajectories, setup.env)
    if not exits:
        raise StageError("build-hst", "no exits among mined subgoals")
    try:
        return hst.build_hierarchy(hst.hst_construct(rules), exits, trajectories, setup.env)
    except hst.StructureError as e:
        raise StageError("build-hst", str(e)) from e


@dataclass(frozen=True)
class CurvePoint:
    episode: int
    mean_steps: float
    mean_reward: float
    steps: tuple[float, ...]
    rewards: tuple[float, ...]


def curve_points(steps: np.ndarray, rewards: np.ndarray) -> list[CurvePoint]:
    """``steps`` and ``rewards`` have shape (runs, episodes)."""
    return [
        CurvePoint(e, float(steps[:, e].mean()), float(rewards[:, e].mean()),
                   tuple(float(x) for x in steps[:, e]), tuple(float(x) for x in rewards[:, e]))
        for e in range(steps.shape[1])
    ]


def option_budget(cfg: ExperimentConfig, subtask: hst.Subtask) -> int:
    return cfg.option_episodes or max(3000, 40 * len(subtask.states))


def run_method(
    cfg: ExperimentConfig,
    setup: Setup,
    method: str,
    hierarchy: hst.TaskHierarchy | None,
    seed: int,
):
    """One run; returns per-episode (steps, rewards) arrays."""
    params = cfg.params(seed)
    if method == "flat":
        _, records = train(setup.env, params, setup.eval_starts)
    else:
        if hierarchy is None:
            raise StageError("run-hrl", "hierarchical run needs a hierarchy")
        options = [
            hrl.learn_option(setup.env, t, cfg.params(seed, option_budget(cfg, t), cfg.option_max_steps))
            for t in hierarchy.subtasks
        ]
        records = hrl.smdp_train(setup.env, None, options, params, setup.eval_starts).records
    steps = np.array([r.steps for r in records], dtype=np.float64)
    rewards = np.array([r.total_reward for r in records], dtype=np.float64)
    return steps, rewards


def last_fraction_means(values: np.ndarray, fraction: float = 0.1) -> np.ndarray:
    """Per-run mean over the final ``fraction`` of episodes."""
    k = max(1, int(round(values.shape[1] * fraction)))
    return values[:, -k:].mean(axis=1)


# ----------------------------------------------------------------------------
# statistics and artifacts


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> tuple[float, float]:
    """Two-sided Welch t statistic and p-value."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    for name, x in (("sample_a", a), ("sample_b", b)):
        if x.size < 2:
            raise ValueError(f"{name} needs at least two values")
        if x.var(ddof=1) == 0.0:
            raise ValueError(f"{name} has zero variance")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se = np.sqrt(va + vb)
    t = (a.mean() - b.mean()) / se
    df = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    p = 2.0 * stats.t.sf(abs(t), df)
    return float(t), float(min(p, 1.0))


def visit_matrix(trajectories: Sequence[Trajectory], env: TabularEnv) -> np.ndarray:
    counts = np.zeros(env.shape, dtype=np.int64)
    flat = counts.reshape(-1)
    for t in trajectories:
        for s in t.states:
            flat[env.position_index(s)] += 1
    return counts


def emit_visit_matrix(trajectories: Sequence[Trajectory], env: TabularEnv, out_dir) -> np.ndarray:
    """Write ``visits.csv`` and a plain greymap ``visits.pgm``; brighter means more visits."""
    counts = visit_matrix(trajectories, env)
    out = Path(out_dir)
    with open(out / "visits.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(counts.tolist())
    top = counts.max()
    grey = np.zeros_like(counts) if top == 0 else np.rint(255 * counts / top).astype(np.int64)
    lines = ["P2", f"{counts.shape[1]} {counts.shape[0]}", "255"]
    lines += [" ".join(str(v) for v in row) for row in grey]
    (out / "visits.pgm").write_text("\n".join(lines) + "\n")
    return counts


def write_curves(path, curves: dict[str, list[CurvePoint]]) -> None:
    methods = list(curves)
    runs = {m: len(curves[m][0].steps) for m in methods}
    header = ["episode"]
    for m in methods:
        header += [f"{m}_steps_r{i}" for i in range(runs[m])]
        header += [f"{m}_reward_r{i}" for i in range(runs[m])]
        header += [f"{m}_mean_steps", f"{m}_mean_reward"]
    n = len(curves[methods[0]])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for e in range(n):
            row = [e]
            for m in methods:
                p = curves[m][e]
                row += [repr(x) for x in p.steps] + [repr(x) for x in p.rewards]
                row += [repr(p.mean_steps), repr(p.mean_reward)]
            w.writerow(row)


def read_curves(path) -> dict[str, list[CurvePoint]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    methods = [c[: -len("_mean_steps")] for c in rows[0] if c.endswith("_mean_steps")]
    out = {}
    for m in methods:
        sk = sorted((c for c in rows[0] if c.startswith(f"{m}_steps_r")), key=lambda c: int(c.rsplit("r", 1)[1]))
        rk = sorted((c for c in rows[0] if c.startswith(f"{m}_reward_r")), key=lambda c: int(c.rsplit("r", 1)[1]))
        out[m] = [
            CurvePoint(int(r["episode"]), float(r[f"{m}_mean_steps"]), float(r[f"{m}_mean_reward"]),
                       tuple(float(r[c]) for c in sk), tuple(float(r[c]) for c in rk))
            for r in rows
        ]
    return out


def write_trajectories(out_dir, trajectories: Sequence[Trajectory]) -> None:
    out = Path(out_dir)
    miner.write_transactions_csv(out / "transactions.csv", [t.states for t in trajectories])
    miner.write_transactions_csv(out / "actions.csv", [t.actions for t in trajectories])


def read_trajectories(out_dir, env: TabularEnv | None = None) -> list[Trajectory]:
    """Trajectories from ``transactions.csv``; actions from ``actions.csv`` or inferred via ``env``."""
    out = Path(out_dir)
    states = miner.read_transactions_csv(out / "transactions.csv")
    if (out / "actions.csv").exists():
        with open(out / "actions.csv", newline="") as fh:
            acts = [[int(x) for x in row] for row in csv.reader(fh)]
        if len(acts) != len(states):
            raise StageError("mine", "actions.csv and transactions.csv disagree")
    elif env is not None:
        acts = [[env.infer_action(s, s2) for s, s2 in zip(row, row[1:])] for row in states]
    else:
        acts = [[] for _ in states]
    return [Trajectory(tuple(s), tuple(a), k) for k, (s, a) in enumerate(zip(states, acts))]


def write_hierarchy(out_dir, hierarchy: hst.TaskHierarchy, env: TabularEnv) -> None:
    out = Path(out_dir)
    (out / "hierarchy.txt").write_text(hierarchy.render(env.actions))
    (out / "hierarchy.adj").write_text(hierarchy.adjacency())


# ----------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineResult:
    config: ExperimentConfig
    trajectories: list[Trajectory] = field(default_factory=list)
    rules: list[miner.SequentialRule] = field(default_factory=list)
    hierarchy: hst.TaskHierarchy | None = None
    curves: dict[str, list[CurvePoint]] = field(default_factory=dict)
    visits: np.ndarray | None = None
    stats: dict[str, float] = field(default_factory=dict)
    status: str = "ok"


def compare_methods(curves: dict[str, list[CurvePoint]]) -> dict[str, float]:
    """Welch test of per-run last-10% mean reward, hierarchical against flat."""
    out: dict[str, float] = {}
    samples = {}
    for m, pts in curves.items():
        rewards = np.array([p.rewards for p in pts]).T
        steps = np.array([p.steps for p in pts]).T
        samples[m] = last_fraction_means(rewards)
        out[f"{m}_last10_reward"] = float(samples[m].mean())
        out[f"{m}_last10_steps"] = float(last_fraction_means(steps).mean())
    if "flat" in samples and "hier" in samples and len(samples["flat"]) >= 2:
        try:
            out["t"], out["p"] = welch_t_test(samples["hier"], samples["flat"])
        except ValueError as e:
            log.warning("t-test skipped: %s", e)
    return out


def write_stats(path, result: PipelineResult) -> None:
    lines = [f"status={result.status}"]
    lines += [f"{k}={v!r}" for k, v in result.stats.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def run_pipeline(cfg: ExperimentConfig, out_dir=None) -> PipelineResult:
    """Learn, mine, build and compare; artifacts go to ``out_dir`` when given.

    A learning stage without any successful episode stops the pipeline with
    ``status="halted"`` and raises :class:`StageError` naming the stage.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = PipelineResult(cfg)
    setup = make_setup(cfg)
    try:
        result.trajectories = learn_stage(cfg, setup)
    except StageError:
        result.status = "halted"
        result.stats["successful_trajectories"] = 0
        if out is not None:
            write_stats(out / "stats.txt", result)
        raise
    if out is not None:
        write_trajectories(out, result.trajectories)
        result.visits = emit_visit_matrix(result.trajectories, setup.env, out)
    else:
        result.visits = visit_matrix(result.trajectories, setup.env)

    result.rules = mine_stage(cfg, result.trajectories)
    if out is not None:
        miner.write_rules_csv(out / "rules.csv", result.rules)

    methods = cfg.method_list
    if "hier" in methods or cfg.env == "golden":
        result.hierarchy = build_stage(cfg, setup, result.rules, result.trajectories)
        if out is not None:
            write_hierarchy(out, result.hierarchy, setup.env)

    if cfg.env != "golden" and methods:
        for m in methods:
            runs = [run_method(cfg, setup, m, result.hierarchy, cfg.seed + r) for r in range(cfg.runs)]
            steps = np.array([s for s, _ in runs])
            rewards = np.array([r for _, r in runs])
            result.curves[m] = curve_points(steps, rewards)
        result.stats.update(compare_methods(result.curves))
        if out is not None:
            write_curves(out / "curves.csv", result.curves)
    if out is not None:
        write_stats(out / "stats.txt", result)
    return result


GOLDEN_CONFIG = ExperimentConfig(env="golden", minsup=0.9, minconf=0.9, methods="")


def run_golden(out_dir=None) -> tuple[PipelineResult, bool]:
    """Golden example; the flag tells whether ``hierarchy.txt`` matches the shipped copy."""
    result = run_pipeline(GOLDEN_CONFIG, out_dir)
    text = result.hierarchy.render(phase_maze().actions)
    return result, text == data_path("golden_hierarchy.txt").read_text()
