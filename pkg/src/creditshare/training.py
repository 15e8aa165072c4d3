"""Outer training loop: collect an episode, store it, refresh per-agent
credits and policies every iteration, and retrain the return decomposer on
buffered episodes every `decomp_every` iterations until its loss plateaus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape, backward
from .config import build_all, config_hash
from .envs import make_env, run_episode, save_trajectories, load_trajectories
from .model import ReturnDecomposer
from .optim import Adam
from .policy import ActorCritic, AgentRollout, RandomPolicy, ppo_update


@dataclass
class TrainConfig:
    iterations: int
    decomp_every: int = 5
    decomp_max_epochs: int = 20
    decomp_plateau_tol: float = 1e-3
    decomp_plateau_patience: int = 3
    policy_batch: int = 1
    decomp_batch: int = 64
    buffer_capacity: int = 1000
    warmup_episodes: int = 100
    seed: int = 0
    credit_mode: str = "decomposer"      # "uniform" -> shared-return ablation
    policy_batch_source: str = "latest"  # "buffer" -> sample stale episodes
    decomp_lr: float = 1e-3
    metric_window: int = 100
    checkpoint_every: int = 0            # 0 -> checkpoint only at the end
    early_stop_metric: str = ""          # "" disables early stopping
    early_stop_threshold: float = 0.0
    log_every: int = 1

    def __post_init__(self):
        if self.iterations < 1 or self.decomp_every < 1:
            raise ValueError("iterations and decomp_every must be >= 1")
        if self.credit_mode not in ("decomposer", "uniform"):
            raise ValueError(f"unknown credit_mode {self.credit_mode!r}")
        if self.policy_batch_source not in ("latest", "buffer"):
            raise ValueError(
                f"unknown policy_batch_source {self.policy_batch_source!r}")


class ExperienceBuffer:
    """Fixed-capacity episode store; eviction is oldest-first."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items = []
        self.insertions = 0

    def __len__(self):
        return len(self._items)

    def add(self, trajectory):
        self._items.append(trajectory)
        self.insertions += 1
        if len(self._items) > self.capacity:
            self._items.pop(0)

    def sample(self, batch, rng):
        size = min(batch, len(self._items))
        idx = rng.choice(len(self._items), size=size, replace=False)
        return [self._items[i] for i in idx]

    def latest(self, n):
        return self._items[-n:]

    def all(self):
        return list(self._items)


def uniform_credits(trajectory):
    """Shared-return ablation: every (t, agent) cell gets r_ep / (N*T)."""
    t, n = trajectory.length, trajectory.n_agents
    return np.full((t, n), trajectory.episodic_return / (n * t))


def train_decomposer(model, optimizer, buffer, tc: TrainConfig,
                     sample_rng, mask_rng):
    """Inner loop: repeat (sample D', one gradient step) until the loss
    plateaus or the epoch cap is reached. Returns the last loss."""
    best = np.inf
    streak = 0
    last = np.nan
    for _ in range(tc.decomp_max_epochs):
        batch = buffer.sample(tc.decomp_batch, sample_rng)
        with Tape() as tape:
            loss = model.loss(batch, mask_rng)
        backward(loss, tape)
        optimizer.step()
        optimizer.zero_grad()
        last = loss.item()
        if last < best * (1.0 - tc.decomp_plateau_tol):
            best = min(best, last)
            streak = 0
        else:
            streak += 1
            if streak >= tc.decomp_plateau_patience:
                break
    return last


def agent_rollouts(trajectory, credits):
    """Split a joint trajectory into independent per-agent rollouts."""
    out = []
    for i in range(trajectory.n_agents):
        out.append(AgentRollout(
            states=trajectory.states[:, i],
            actions=trajectory.actions[:, i],
            logps=trajectory.logps[:, i],
            credits=credits[:, i],
            terminal=trajectory.terminated,
            final_state=trajectory.final_state[i],
        ))
    return out


def _fmt(x):
    return repr(float(x))


class Trainer:
    """Owns one run directory: metrics CSV, checkpoints, reproducibility."""

    def __init__(self, cfg, run_dir):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.run_dir = Path(run_dir)
        self.tc = TrainConfig(**cfg["trainer"])
        self.env, self.model_cfg, self.policy_cfg = build_all(cfg)
        tc = self.tc

        ss = np.random.SeedSequence(tc.seed)
        (model_ss, env_ss, mask_ss, sample_ss, warm_ss,
         *agent_ss) = ss.spawn(5 + self.env.n_agents)
        self.model = ReturnDecomposer(self.model_cfg, np.random.default_rng(model_ss))
        self.model_opt = Adam(self.model.params(), lr=tc.decomp_lr)
        self.agents = [ActorCritic(self.policy_cfg, np.random.default_rng(s))
                       for s in agent_ss]
        self.buffer = ExperienceBuffer(tc.buffer_capacity)
        self.env_seed_rng = np.random.default_rng(env_ss)
        self.mask_rng = np.random.default_rng(mask_ss)
        self.sample_rng = np.random.default_rng(sample_ss)
        self.warm_rng = np.random.default_rng(warm_ss)

        self.next_iteration = 0
        self.episodes = 0
        self.window_returns = []
        self.window_success = []
        self.last_decomp_loss = float("nan")

    # ------------------------------------------------------------------
    def warmup(self):
        """Fill the buffer with random-policy episodes before iteration 0."""
        randoms = [RandomPolicy(self.env.n_actions)] * self.env.n_agents
        for _ in range(self.tc.warmup_episodes):
            seed = int(self.warm_rng.integers(0, 2 ** 31 - 1))
            self.buffer.add(run_episode(self.env, randoms, seed))
            self.episodes += 1

    def credits_for(self, trajectory):
        if self.tc.credit_mode == "uniform":
            return uniform_credits(trajectory)
        return self.model.predict_credits(trajectory, rng=self.mask_rng)

    def _metric_columns(self):
        ent = [f"entropy_{i}" for i in range(self.env.n_agents)]
        return ["iteration", "episodes", "episode_return", "avg_return",
                "success_rate", "decomposer_loss", *ent]

    def run(self, resume=False):
        self.run_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = self.run_dir / "metrics.csv"
        snapshot_path = self.run_dir / "config.json"
        if resume:
            self.load_checkpoint()
            if json.loads(snapshot_path.read_text())["hash"] != self.hash:
                raise ValueError("resume config differs from the original run")
            fh = open(metrics_path, "a")
        else:
            snapshot_path.write_text(json.dumps(
                {"hash": self.hash, "seed": self.tc.seed, "config": self.cfg},
                indent=2, sort_keys=True))
            fh = open(metrics_path, "w")
            fh.write(f"# config_hash={self.hash}\n")
            fh.write(",".join(self._metric_columns()) + "\n")
            self.warmup()

        tc = self.tc
        try:
            for k in range(self.next_iteration, tc.iterations):
                seed = int(self.env_seed_rng.integers(0, 2 ** 31 - 1))
                traj = run_episode(self.env, self.agents, seed)
                self.buffer.add(traj)
                self.episodes += 1

                if tc.policy_batch_source == "latest":
                    batch = self.buffer.latest(tc.policy_batch)
                else:
                    batch = self.buffer.sample(tc.policy_batch, self.sample_rng)
                per_agent = [[] for _ in range(self.env.n_agents)]
                for tr in batch:
                    credits = self.credits_for(tr)
                    for i, ro in enumerate(agent_rollouts(tr, credits)):
                        per_agent[i].append(ro)
                entropies = []
                for i, agent in enumerate(self.agents):
                    stats = ppo_update(agent, per_agent[i])
                    entropies.append(stats["entropy"])

                if k % tc.decomp_every == 0 and tc.credit_mode == "decomposer":
                    self.last_decomp_loss = train_decomposer(
                        self.model, self.model_opt, self.buffer, tc,
                        self.sample_rng, self.mask_rng)

                self.window_returns.append(traj.episodic_return)
                self.window_success.append(float(traj.terminated))
                if len(self.window_returns) > tc.metric_window:
                    self.window_returns.pop(0)
                    self.window_success.pop(0)
                avg_return = float(np.mean(self.window_returns))
                success = float(np.mean(self.window_success))

                if k % tc.log_every == 0 or k == tc.iterations - 1:
                    row = [str(k), str(self.episodes), _fmt(traj.episodic_return),
                           _fmt(avg_return), _fmt(success),
                           _fmt(self.last_decomp_loss),
                           *[_fmt(e) for e in entropies]]
                    fh.write(",".join(row) + "\n")
                    fh.flush()
                self.next_iteration = k + 1

                if (tc.early_stop_metric == "success_rate"
                        and len(self.window_success) >= tc.metric_window
                        and success >= tc.early_stop_threshold):
                    break
                if (tc.early_stop_metric == "avg_return"
                        and len(self.window_returns) >= tc.metric_window
                        and avg_return >= tc.early_stop_threshold):
                    break
                if tc.checkpoint_every and (k + 1) % tc.checkpoint_every == 0:
                    self.save_checkpoint()
        finally:
            fh.close()
        self.save_checkpoint()
        self.save_final()
        return self.run_dir

    # checkpointing -----------------------------------------------------
    def save_final(self):
        self.model.save(self.run_dir / "decomposer.npz")
        for i, agent in enumerate(self.agents):
            agent.save(self.run_dir / f"policy_{i}.npz")

    def save_checkpoint(self):
        meta = {
            "next_iteration": self.next_iteration,
            "episodes": self.episodes,
            "window_returns": self.window_returns,
            "window_success": self.window_success,
            "last_decomp_loss": (None if np.isnan(self.last_decomp_loss)
                                 else self.last_decomp_loss),
            "rng": {
                "env": self.env_seed_rng.bit_generator.state,
                "mask": self.mask_rng.bit_generator.state,
                "sample": self.sample_rng.bit_generator.state,
                "warm": self.warm_rng.bit_generator.state,
            },
            "hash": self.hash,
        }
        arrays = {"meta": np.array(json.dumps(meta))}
        for i, p in enumerate(self.model.params()):
            arrays[f"model_p{i}"] = p.data
        st = self.model_opt.state_dict()
        arrays["model_opt_step"] = np.array(st["step_count"])
        for i, (m, v) in enumerate(zip(st["m"], st["v"])):
            arrays[f"model_m{i}"] = m
            arrays[f"model_v{i}"] = v
        for a, agent in enumerate(self.agents):
            for i, p in enumerate(agent.params()):
                arrays[f"agent{a}_p{i}"] = p.data
            st = agent.optimizer.state_dict()
            arrays[f"agent{a}_opt_step"] = np.array(st["step_count"])
            for i, (m, v) in enumerate(zip(st["m"], st["v"])):
                arrays[f"agent{a}_m{i}"] = m
                arrays[f"agent{a}_v{i}"] = v
        np.savez(self.run_dir / "checkpoint.npz", **arrays)
        save_trajectories(self.run_dir / "buffer.jsonl", self.buffer.all(),
                          {"hash": self.hash})

    def load_checkpoint(self):
        path = self.run_dir / "checkpoint.npz"
        with np.load(path, allow_pickle=False) as blob:
            meta = json.loads(str(blob["meta"]))
            if meta["hash"] != self.hash:
                raise ValueError("checkpoint belongs to a different config")
            self.next_iteration = meta["next_iteration"]
            self.episodes = meta["episodes"]
            self.window_returns = meta["window_returns"]
            self.window_success = meta["window_success"]
            self.last_decomp_loss = (float("nan")
                                     if meta["last_decomp_loss"] is None
                                     else meta["last_decomp_loss"])
            self.env_seed_rng.bit_generator.state = meta["rng"]["env"]
            self.mask_rng.bit_generator.state = meta["rng"]["mask"]
            self.sample_rng.bit_generator.state = meta["rng"]["sample"]
            self.warm_rng.bit_generator.state = meta["rng"]["warm"]
            for i, p in enumerate(self.model.params()):
                p.data = blob[f"model_p{i}"].copy()
            self.model_opt.load_state_dict({
                "step_count": int(blob["model_opt_step"]),
                "m": [blob[f"model_m{i}"] for i in range(len(self.model.params()))],
                "v": [blob[f"model_v{i}"] for i in range(len(self.model.params()))],
            })
            for a, agent in enumerate(self.agents):
                n = len(agent.params())
                for i, p in enumerate(agent.params()):
                    p.data = blob[f"agent{a}_p{i}"].copy()
                agent.optimizer.load_state_dict({
                    "step_count": int(blob[f"agent{a}_opt_step"]),
                    "m": [blob[f"agent{a}_m{i}"] for i in range(n)],
                    "v": [blob[f"agent{a}_v{i}"] for i in range(n)],
                })
        _, trajectories = load_trajectories(self.run_dir / "buffer.jsonl")
        self.buffer = ExperienceBuffer(self.tc.buffer_capacity)
        for tr in trajectories:
            self.buffer.add(tr)


def train(cfg, run_dir, resume=False):
    return Trainer(cfg, run_dir).run(resume=resume)
