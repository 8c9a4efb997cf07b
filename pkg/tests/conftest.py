import sys

import pytest

from subgoal_hierarchy import harness
from subgoal_hierarchy.envs import phase_maze


@pytest.fixture(scope="session")
def golden_env():
    return phase_maze()


@pytest.fixture(scope="session")
def golden_trajs(golden_env):
    return harness.golden_trajectories(golden_env)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}")
