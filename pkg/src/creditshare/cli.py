"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, config_hash, load_config
from .envs import EnvConfig, EnvConfigError, load_trajectories
from .evaluate import (SyntheticTask, aggregate_runs, eval_fairness,
                       export_credits, run_synthetic)
from .model import ReturnDecomposer
from .policy import ActorCritic
from .training import train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _cmd_train(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"trainer.seed={args.seed}")
    if args.paper_faithful:
        overrides.append("trainer.warmup_episodes=0")
        overrides.append("trainer.policy_batch_source='buffer'")
    cfg = load_config(args.config, overrides)
    run_dir = args.run_dir or f"runs/{Path(args.config).stem}-{config_hash(cfg)}"
    out = train(cfg, run_dir, resume=args.resume)
    print(out)
    return EXIT_OK


def _load_run(run_dir):
    run_dir = Path(run_dir)
    snap = json.loads((run_dir / "config.json").read_text())
    env_cfg = EnvConfig(**snap["config"]["env"])
    model = ReturnDecomposer.load(run_dir / "decomposer.npz")
    policies = []
    for i in range(env_cfg.n_agents):
        policies.append(ActorCritic.load(run_dir / f"policy_{i}.npz"))
    return snap, env_cfg, model, policies


def _cmd_eval_fairness(args):
    snap, env_cfg, model, policies = _load_run(args.run_dir)
    report = eval_fairness(model, policies, env_cfg, args.episodes, args.seed)
    out = report.to_dict()
    print(json.dumps(out, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_synthetic_decomp(args):
    task = SyntheticTask(only_first_cell=args.only_first_cell)
    report = run_synthetic(task, seed=args.seed, steps=args.steps,
                           train_episodes=args.episodes,
                           time_budget=args.time_budget)
    summary = {k: report[k] for k in
               ("pearson", "p_value", "degenerate", "final_loss")}
    print(json.dumps(summary, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=2))
    return EXIT_OK


def _cmd_plot_data(args):
    written = aggregate_runs(args.run_dirs, args.out)
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_replay(args):
    model = ReturnDecomposer.load(args.checkpoint)
    header, trajectories = load_trajectories(args.trajectories)
    rng = np.random.default_rng(args.seed)
    matrices = [model.predict_credits(tr, rng=rng) for tr in trajectories]
    export_credits(args.out, matrices, model.cfg.hash())
    print(args.out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="creditshare",
        description="Redistribute delayed episodic returns over time steps "
                    "and agents, and train independent policies on the "
                    "resulting credits.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--run-dir", default=None)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--paper-faithful", action="store_true",
                   help="no warmup; policy batches sampled from the buffer")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval-fairness",
                       help="credit vs inverse-prey-distance correlation")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_eval_fairness)

    p = sub.add_parser("synthetic-decomp",
                       help="train on decomposable synthetic returns and "
                            "report credit recovery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=512)
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--time-budget", type=float, default=None)
    p.add_argument("--only-first-cell", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_synthetic_decomp)

    p = sub.add_parser("plot-data", help="aggregate metric CSVs across seeds")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_plot_data)

    p = sub.add_parser("replay", help="run logged trajectories through a "
                                      "decomposer checkpoint")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_replay)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, EnvConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
