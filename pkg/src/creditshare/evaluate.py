"""Evaluation utilities: Pearson correlation, credit-fairness reports for
the predator scenario, synthetic decomposition benchmarks, credit export
and metric aggregation across seed runs."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .autodiff import Tape, backward
from .envs import EnvConfig, Trajectory, make_env, run_episode
from .envs.particle import nearest_prey_distance
from .model import ModelConfig, ReturnDecomposer
from .optim import Adam


def pearson(x, y):
    """Pearson r and two-tailed p-value (single-pass sum formulas).

    Returns (r, p, degenerate): degenerate is True when either input has
    zero variance, in which case r and p are NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson expects two equal-length vectors")
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 samples")
    sx, sy = x.sum(), y.sum()
    sxx, syy, sxy = (x * x).sum(), (y * y).sum(), (x * y).sum()
    vx = sxx - sx * sx / n
    vy = syy - sy * sy / n
    if vx <= 0.0 or vy <= 0.0:
        return float("nan"), float("nan"), True
    r = (sxy - sx * sy / n) / np.sqrt(vx * vy)
    r = float(np.clip(r, -1.0, 1.0))
    if abs(r) == 1.0:
        return r, 0.0, False
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    p = float(2.0 * sps.t.sf(abs(t), n - 2))
    return r, p, False


@dataclass
class FairnessReport:
    coefficient: float
    p_value: float
    n_pairs: int
    episodes: int
    degenerate: bool
    credits: np.ndarray = field(repr=False)            # pooled credit samples
    inverse_distances: np.ndarray = field(repr=False)  # pooled 1/distance

    def to_dict(self):
        return {
            "coefficient": self.coefficient,
            "p_value": self.p_value,
            "n_pairs": self.n_pairs,
            "episodes": self.episodes,
            "degenerate": self.degenerate,
        }


def eval_fairness(model, policies, env_config: EnvConfig, episodes, seed):
    """Correlate per-step agent credits with 1/distance to the nearest prey.

    Pairing is per step, against the nearest prey, pooled across agents and
    episodes. Distances reuse the offsets stored in the agent state, i.e.
    the same metric the hidden reward uses.
    """
    if env_config.scenario != "predator_prey":
        raise ValueError("fairness evaluation requires the predator_prey scenario")
    env = make_env(env_config)
    ss = np.random.SeedSequence(seed)
    ep_rng, mask_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    creds, invd = [], []
    for _ in range(episodes):
        traj = run_episode(env, policies, int(ep_rng.integers(0, 2 ** 31 - 1)))
        credits = model.predict_credits(traj, rng=mask_rng)
        for t in range(traj.length):
            for i in range(env.n_agents):
                d = nearest_prey_distance(traj.states[t, i], env.n_points)
                creds.append(credits[t, i])
                invd.append(1.0 / max(d, 1e-6))
    creds = np.array(creds)
    invd = np.array(invd)
    r, p, degenerate = pearson(creds, invd)
    return FairnessReport(r, p, len(creds), episodes, degenerate, creds, invd)


def export_credits(path, credit_matrices, config_hash):
    """Tabular credit dump: one row per (episode, step, agent)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["episode", "t", "agent", "credit"])
        for ep, matrix in enumerate(credit_matrices):
            for t in range(matrix.shape[0]):
                for i in range(matrix.shape[1]):
                    writer.writerow([ep, t, i, repr(float(matrix[t, i]))])


# ---------------------------------------------------------------------------
# synthetic decomposition benchmark
# ---------------------------------------------------------------------------

@dataclass
class SyntheticTask:
    """Trajectories whose episodic return is an exactly sum-decomposable
    function of per-(agent, step) states, with known ground truth.

    Each agent-step carries a sparse binary signal feature; the hidden
    reward is the agent's magnitude when its signal fires. When
    `only_first_cell` is set, only agent 0 at step 0 can ever earn reward.
    """

    n_agents: int = 3
    horizon: int = 16
    state_dim: int = 6
    n_actions: int = 4
    signal_prob: float = 0.15
    magnitudes: tuple = (1.0, 2.0, -1.0)
    only_first_cell: bool = False

    def generate(self, n_episodes, rng):
        """Returns (trajectories, true per-(t, agent) reward matrices)."""
        trajs, truths = [], []
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        for _ in range(n_episodes):
            t, n = self.horizon, self.n_agents
            states = rng.uniform(-1.0, 1.0, size=(t, n, self.state_dim))
            signal = (rng.random((t, n)) < self.signal_prob).astype(float)
            if self.only_first_cell:
                keep = np.zeros((t, n))
                keep[0, 0] = 1.0
                signal = signal * keep
            states[:, :, 0] = signal
            actions = rng.integers(0, self.n_actions, size=(t, n))
            true = signal * mags[None, :]
            trajs.append(Trajectory(
                states=states,
                actions=actions.astype(np.int64),
                episodic_return=float(true.sum()),
                final_state=states[-1],
                terminated=False,
            ))
            truths.append(true)
        return trajs, truths


def run_synthetic(task: SyntheticTask, seed, train_episodes=512,
                  holdout_episodes=128, steps=600, batch=32, lr=1e-3,
                  model_overrides=None, time_budget=None):
    """Train a decomposer on a synthetic task and score credit recovery.

    Returns a report with the held-out per-(agent, step) Pearson
    correlation between learned credits and planted rewards, the final
    training loss, and the trained model.
    """
    import time
    ss = np.random.SeedSequence(seed)
    gen_rng, init_rng, mask_rng, batch_rng = (
        np.random.default_rng(s) for s in ss.spawn(4))
    train_set, _ = task.generate(train_episodes, gen_rng)
    held_set, held_truth = task.generate(holdout_episodes, gen_rng)

    overrides = dict(embed_dim=32, n_heads=2, ffw_dim=64, n_layers=1, k_samples=3)
    overrides.update(model_overrides or {})
    cfg = ModelConfig(state_dim=task.state_dim, n_actions=task.n_actions,
                      n_agents=task.n_agents, max_horizon=task.horizon,
                      **overrides)
    model = ReturnDecomposer(cfg, init_rng)
    optimizer = Adam(model.params(), lr=lr)

    start = time.monotonic()
    final_loss = np.nan
    for _ in range(steps):
        idx = batch_rng.choice(len(train_set), size=batch, replace=False)
        with Tape() as tape:
            loss = model.loss([train_set[i] for i in idx], mask_rng)
        backward(loss, tape)
        optimizer.step()
        optimizer.zero_grad()
        final_loss = loss.item()
        if time_budget is not None and time.monotonic() - start > time_budget:
            break

    learned, truth = [], []
    for traj, true in zip(held_set, held_truth):
        credits = model.predict_credits(traj, rng=mask_rng)
        learned.append(credits.ravel())
        truth.append(true.ravel())
    learned = np.concatenate(learned)
    truth = np.concatenate(truth)
    if truth.std() == 0.0:
        r, p, degenerate = float("nan"), float("nan"), True
    else:
        r, p, degenerate = pearson(learned, truth)
    return {
        "pearson": r,
        "p_value": p,
        "degenerate": degenerate,
        "final_loss": final_loss,
        "model": model,
        "held_credits": learned.reshape(holdout_episodes, task.horizon,
                                        task.n_agents),
        "held_truth": truth.reshape(holdout_episodes, task.horizon,
                                    task.n_agents),
    }


# ---------------------------------------------------------------------------
# metric aggregation across seed runs
# ---------------------------------------------------------------------------

def read_metrics(run_dir):
    path = Path(run_dir) / "metrics.csv"
    with open(path) as fh:
        comment = fh.readline().strip()
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, row)) for row in reader]
    return comment, header, np.array(rows)


def _scenario_of(run_dir):
    snap = json.loads((Path(run_dir) / "config.json").read_text())
    return snap["config"]["env"]["scenario"], snap["hash"]


def aggregate_runs(run_dirs, out_dir):
    """Seed-aggregate metrics: per metric, a CSV of (iteration, mean, std).

    Runs must share a scenario; iterations are matched by intersection so
    early-stopped runs align.
    """
    if not run_dirs:
        raise ValueError("no run directories given")
    scenarios, hashes, tables, header = set(), [], [], None
    for rd in run_dirs:
        scen, h = _scenario_of(rd)
        scenarios.add(scen)
        hashes.append(h)
        _, hdr, rows = read_metrics(rd)
        header = header or hdr
        if hdr != header:
            raise ValueError(f"metric columns differ in {rd}")
        tables.append(rows)
    if len(scenarios) != 1:
        raise ValueError(f"cannot aggregate across scenarios: {sorted(scenarios)}")

    common = None
    for rows in tables:
        iters = set(rows[:, 0].astype(int))
        common = iters if common is None else (common & iters)
    common = np.array(sorted(common))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for col, name in enumerate(header):
        if name == "iteration":
            continue
        series = []
        for rows in tables:
            lookup = {int(it): val for it, val in zip(rows[:, 0], rows[:, col])}
            series.append([lookup[it] for it in common])
        series = np.array(series)  # [runs, iterations]
        path = out_dir / f"{name}.csv"
        with open(path, "w") as fh:
            fh.write(f"# source_hashes={','.join(hashes)}\n")
            fh.write("iteration,mean,std\n")
            for j, it in enumerate(common):
                fh.write(f"{it},{repr(float(series[:, j].mean()))},"
                         f"{repr(float(series[:, j].std()))}\n")
        written.append(path)
    return written
