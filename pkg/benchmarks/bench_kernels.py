"""Time the Q-learning and SMDP kernels compiled with numba against the pure-Python fallback.

Each backend runs in its own interpreter because the backend is chosen at
import time from ``SUBGOAL_HIERARCHY_NO_NUMBA``.

    python benchmarks/bench_kernels.py [--episodes N]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import hashlib, json, sys, time
from subgoal_hierarchy import _kernels, harness, hrl
from subgoal_hierarchy.learner import LearnerParams, train

episodes = int(sys.argv[1])
cfg = harness.ExperimentConfig()
setup = harness.make_setup(cfg)
env, start = setup.env, setup.eval_starts[0]
env.tables
# warm-up compiles the kernels when numba is active
train(env, LearnerParams(episodes=2, max_steps=50), start)
hrl.smdp_train(env, None, hrl.primitive_options(env), LearnerParams(episodes=2, max_steps=50), start,
               include_primitives=False)
params = LearnerParams(episodes=episodes, max_steps=1000, seed=0)
t0 = time.perf_counter()
q, recs = train(env, params, start)
t_flat = time.perf_counter() - t0
t0 = time.perf_counter()
res = hrl.smdp_train(env, None, hrl.primitive_options(env), params, start, include_primitives=False)
t_smdp = time.perf_counter() - t0
print(json.dumps({
    "numba": _kernels.USE_NUMBA,
    "flat_s": t_flat,
    "smdp_s": t_smdp,
    "steps": int(sum(r.steps for r in recs)),
    "hash": hashlib.sha256(q.values.tobytes() + res.q.tobytes()).hexdigest(),
}))
"""


def run(episodes: int, fallback: bool) -> dict:
    env = dict(os.environ)
    env.pop("SUBGOAL_HIERARCHY_NO_NUMBA", None)
    if fallback:
        env["SUBGOAL_HIERARCHY_NO_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", WORKER, str(episodes)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=200)
    args = ap.parse_args()
    jit = run(args.episodes, fallback=False)
    py = run(args.episodes, fallback=True)
    print(f"episodes={args.episodes} primitive steps={jit['steps']}")
    print(f"{'kernel':<8}{'numba s':>10}{'python s':>11}{'speedup':>9}")
    for key, name in (("flat_s", "flat"), ("smdp_s", "smdp")):
        print(f"{name:<8}{jit[key]:>10.4f}{py[key]:>11.4f}{py[key] / jit[key]:>8.1f}x")
    print("identical tables:", jit["hash"] == py["hash"])


if __name__ == "__main__":
    main()
