"""Command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness, miner

STAGE_OF = {
    "train": "learn",
    "mine": "mine",
    "build-hst": "build-hst",
    "run-hrl": "run-hrl",
    "experiment": "experiment",
    "golden": "golden",
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subgoal-hierarchy", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [
        ("train", "flat learning from the mining starts; writes transactions.csv and visits"),
        ("mine", "mine sequential rules from transactions.csv; writes rules.csv"),
        ("build-hst", "build the task hierarchy from rules.csv and transactions.csv"),
        ("run-hrl", "learn and write curves for one method"),
        ("experiment", "full pipeline comparing flat and hierarchical agents"),
        ("golden", "golden worked example; checks hierarchy.txt against the shipped copy"),
    ]:
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", type=Path)
        s.add_argument("--minsup", type=float)
        s.add_argument("--minconf", type=float)
        s.add_argument("--episodes", type=int)
        s.add_argument("--runs", type=int)
        s.add_argument("--seed", type=int)
        s.add_argument("--out", type=Path, default=Path("out"))
        s.add_argument("--method", choices=("flat", "hier"))
    return p


def load_config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.from_file(args.config) if args.config else harness.ExperimentConfig()
    return cfg.replace(
        minsup=args.minsup, minconf=args.minconf, episodes=args.episodes,
        runs=args.runs, seed=args.seed, methods=args.method,
    )


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise harness.StageError(stage, f"missing input {path}")
    return path


def run(args) -> int:
    out: Path = args.out
    if args.command == "golden":
        _, same = harness.run_golden(out)
        print(f"golden hierarchy written to {out / 'hierarchy.txt'}")
        if not same:
            raise harness.StageError("golden", "hierarchy differs from the shipped golden copy")
        print("golden hierarchy matches")
        return 0

    cfg = load_config(args)
    out.mkdir(parents=True, exist_ok=True)
    setup = harness.make_setup(cfg)

    if args.command == "train":
        trajs = harness.learn_stage(cfg, setup)
        harness.write_trajectories(out, trajs)
        harness.emit_visit_matrix(trajs, setup.env, out)
        print(f"{len(trajs)} successful trajectories -> {out / 'transactions.csv'}")
    elif args.command == "mine":
        _need(out / "transactions.csv", "mine")
        trajs = harness.read_trajectories(out, setup.env)
        rules = harness.mine_stage(cfg, trajs)
        miner.write_rules_csv(out / "rules.csv", rules)
        print(f"{len(rules)} rules -> {out / 'rules.csv'}")
    elif args.command == "build-hst":
        rules = miner.read_rules_csv(_need(out / "rules.csv", "build-hst"))
        _need(out / "transactions.csv", "build-hst")
        trajs = harness.read_trajectories(out, setup.env)
        h = harness.build_stage(cfg, setup, rules, trajs)
        harness.write_hierarchy(out, h, setup.env)
        print(h.render(setup.env.actions), end="")
    elif args.command == "run-hrl":
        cfg = cfg.replace(methods=args.method or "hier")
        result = harness.run_pipeline(cfg, out)
        for k, v in result.stats.items():
            print(f"{k}={v}")
    elif args.command == "experiment":
        result = harness.run_pipeline(cfg, out)
        for k, v in result.stats.items():
            print(f"{k}={v}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except harness.StageError as e:
        print(f"error [{e.stage}]: {e.message}", file=sys.stderr)
        return 2
    except harness.ConfigError as e:
        print(f"error [config]: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error [{STAGE_OF[args.command]}]: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
