import numpy as np
import pytest

from subgoal_hierarchy.codec import CodecError
from subgoal_hierarchy.envs import (
    DOWN, LEFT, PRESS, RIGHT, UP, ActionError, GridMap, KeyMaze, MapError, ProgressSpec, Taxi,
    load_map, open_grid, phase_maze, render_map, slip_distribution,
)
from subgoal_hierarchy.envs import NORTH, PICKUP, PUTDOWN, SOUTH


def test_slip_distribution():
    d = slip_distribution(UP, 0.2)
    assert sum(d.values()) == pytest.approx(1.0)
    assert d[UP] == pytest.approx(0.85)
    assert d[LEFT] == pytest.approx(0.05)
    assert slip_distribution(RIGHT, 0.0) == {RIGHT: 1.0}


def test_load_and_render_map():
    text = "..1\n#..\n.2T\n"
    g = load_map(text)
    assert (g.width, g.height) == (3, 3)
    assert g.walls == {(1, 0)}
    assert g.subgoals == (("1", (0, 2)), ("2", (2, 1)))
    assert g.goal_cells == ((2, 2),)
    assert render_map(g) == text


@pytest.mark.parametrize("text", ["..\n...\n", ".?.\n", ""])
def test_bad_maps(text):
    with pytest.raises(MapError):
        load_map(text)


def test_grid_checks():
    with pytest.raises(MapError):
        GridMap(2, 2, frozenset({(5, 5)}))
    with pytest.raises(MapError):
        GridMap(2, 2, frozenset({(0, 0)}), (("1", (0, 0)),))


def _key_maze(slip=0.0):
    grid = load_map("1..\n...\n..T\n")
    return KeyMaze(grid, ProgressSpec.chain("1"), (2, 2), scheme="key", slip=slip)


def test_key_scheme_rewards():
    env = _key_maze()
    s = env.encode((0, 0), 0)
    assert env.transition_distribution(s, PRESS) == [(env.encode((0, 0), 1), 1.0)]
    assert env.reward(s, PRESS, env.encode((0, 0), 1)) == 0.0
    s1 = env.encode((0, 0), 1)
    assert env.reward(s1, PRESS, s1) == -10.0
    assert env.reward(s1, RIGHT, env.encode((0, 1), 1)) == -1.0
    g0 = env.encode((2, 2), 0)
    assert env.reward(g0, PRESS, g0) == -10.0 and not env.is_terminal(g0, PRESS, g0)
    g1 = env.encode((2, 2), 1)
    assert env.reward(g1, PRESS, g1) == 10.0 and env.is_terminal(g1, PRESS, g1)


def test_moves_blocked_by_edges_and_walls():
    env = KeyMaze(load_map(".#\n.T\n"), ProgressSpec.chain(()), (1, 1), slip=0.0)
    s = env.encode((0, 0))
    assert env.transition_distribution(s, UP) == [(s, 1.0)]
    assert env.transition_distribution(s, RIGHT) == [(s, 1.0)]
    assert env.transition_distribution(s, DOWN) == [(env.encode((1, 0)), 1.0)]


def test_factored_codes_decode():
    env = _key_maze()
    s = env.encode((1, 2), 1)
    assert env.decode(s) == (6, 2)
    assert env.describe(s) == ((1, 2), 1)
    assert env.n_states == 18


def test_tree_progress():
    spec = ProgressSpec("tree", (("a", "c"), ("b", "c")))
    assert spec.level_labels(0) == {"a", "b"}
    assert spec.level_labels(1) == {"c"}
    with pytest.raises(ValueError, match="two levels"):
        ProgressSpec("tree", (("a", "b"), ("b", "a")))
    with pytest.raises(ValueError):
        ProgressSpec("tree", (("a", "b"), ("a",)))
    with pytest.raises(ValueError):
        ProgressSpec("chain", ())


def test_tables_match_model():
    env = _key_maze(slip=0.2)
    t = env.tables
    for s in env.states():
        i = env.index(s)
        for a in range(env.n_actions):
            dist = env.transition_distribution(s, a)
            assert sum(p for _, p in dist) == pytest.approx(1.0)
            assert t.cum[i, a, -1] == 1.0
            for k, (s2, _) in enumerate(dist):
                assert t.next[i, a, k] == env.index(s2)
                assert t.reward[i, a, k] == env.reward(s, a, s2)


def test_sample_step_frequencies():
    env = _key_maze(slip=0.2)
    rng = np.random.default_rng(0)
    s = env.encode((1, 1))
    hits = sum(env.sample_step(s, UP, rng).next_state == env.encode((0, 1)) for _ in range(4000))
    assert hits / 4000 == pytest.approx(0.85, abs=0.03)


def test_invalid_action_and_state():
    env = _key_maze()
    with pytest.raises(ActionError):
        env.transition_distribution(env.encode((0, 0)), 9)
    with pytest.raises(CodecError):
        env.transition_distribution(0, UP)


def test_phase_maze_numbering():
    env = phase_maze()
    assert env.n_states == 60
    assert env.encode((1, 2), 0) == 7
    assert env.transition_distribution(7, PRESS) == [(27, 1.0)]
    assert env.transition_distribution(34, PRESS) == [(54, 1.0)]
    assert env.transition_distribution(8, PRESS) == [(8, 1.0)]
    assert env.infer_action(7, 27) == PRESS
    assert env.infer_action(1, 2) == RIGHT
    assert env.infer_action(1, 60) is None


def test_open_grid():
    g = open_grid(4, 3, (("1", (0, 0)),))
    assert g.n_cells == 12 and g.open_cells()[0] == (0, 0)


def test_taxi_model():
    env = Taxi(slip=0.0)
    assert env.n_states == 500
    start = env.encode((0, 0), 0, 1)
    after = env.encode((0, 0), 4, 1)
    assert env.transition_distribution(start, PICKUP) == [(after, 1.0)]
    assert env.reward(start, PICKUP, after) == -1.0
    assert env.reward(after, PICKUP, after) == -10.0
    # walk to G and drop off
    at_g = env.encode((0, 4), 4, 1)
    assert env.reward(at_g, PUTDOWN, env.encode((0, 4), 1, 1)) == 20.0
    assert env.is_terminal(at_g, PUTDOWN, env.encode((0, 4), 1, 1))
    assert env.reward(after, PUTDOWN, after) == -10.0
    # thin wall east of (0, 1)
    s = env.encode((0, 1), 0, 1)
    assert env.transition_distribution(s, 2) == [(s, 1.0)]
    assert env.transition_distribution(s, SOUTH) == [(env.encode((1, 1), 0, 1), 1.0)]
    assert env.transition_distribution(s, NORTH) == [(s, 1.0)]


def test_taxi_pickup_states_and_scale():
    env = Taxi()
    pc = env.pickup_completion_states()
    assert len(set(pc)) == 16
    assert all(env.describe(s).passenger == 4 for s in pc)
    big = Taxi(scale=2)
    assert big.n_states == 100 * 20 and big.landmarks[1] == (0, 8)
    with pytest.raises(ValueError):
        Taxi(scale=0)
