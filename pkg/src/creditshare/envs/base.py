"""Environment-facing types: config, trajectories, episode rollout, storage.

Environments reveal no reward during an episode. The learner-facing record
is states, actions and the single episode-end return; hidden per-step
rewards exist only when a diagnostics flag asks for them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class EnvConfigError(ValueError):
    """Invalid environment configuration."""


class LifecycleError(RuntimeError):
    """step() called after the episode finished."""


@dataclass
class EnvConfig:
    scenario: str                 # "alice_bob" | "coop_nav" | "predator_prey"
    n_agents: int
    horizon: int
    gamma: float = 0.99
    layout: Optional[str] = None  # gridworld layout text; None -> default
    # particle-world knobs (declared config, logged with every run)
    n_landmarks: int = 0
    n_prey: int = 1
    arena: float = 1.0
    damping: float = 0.5
    accel: float = 0.1
    agent_size: float = 0.15
    capture_radius: float = 0.2
    capture_bonus: float = 10.0
    distance_penalty: float = 0.1
    collision_penalty: float = 1.0

    def __post_init__(self):
        if self.n_agents < 1:
            raise EnvConfigError("n_agents must be >= 1")
        if self.horizon < 1:
            raise EnvConfigError("horizon must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise EnvConfigError("gamma must be in [0, 1)")


@dataclass
class Trajectory:
    """One complete episode as the learner sees it.

    hidden_rewards is populated only when an episode was collected with
    diagnostics enabled and must never feed any learner.
    """

    states: np.ndarray          # [T, N, state_dim]
    actions: np.ndarray         # [T, N] int
    episodic_return: float
    final_state: np.ndarray     # [N, state_dim]
    terminated: bool            # goal reached (False -> horizon timeout)
    logps: Optional[np.ndarray] = None           # [T, N] behavior log-probs
    hidden_rewards: Optional[np.ndarray] = None  # [T] diagnostics only
    seed: Optional[int] = None

    @property
    def length(self):
        return self.states.shape[0]

    @property
    def n_agents(self):
        return self.states.shape[1]

    def learner_view(self):
        """The training-API surface: no hidden per-step rewards."""
        return self.states, self.actions, self.episodic_return


def run_episode(env, policies, seed, record_hidden=False):
    """Roll one episode with per-agent policies; returns a Trajectory.

    `seed` drives both the environment reset and action sampling, so
    identical (env config, seed, policies) reproduce the episode bitwise.
    """
    if len(policies) != env.n_agents:
        raise ValueError("need exactly one policy per agent")
    ss = np.random.SeedSequence(seed)
    env_seed, act_seed = ss.spawn(2)
    rng = np.random.default_rng(act_seed)

    states = env.reset(seed=env_seed)
    state_log, action_log, logp_log, reward_log = [], [], [], []
    total = 0.0
    done = False
    goal = False
    while not done and len(state_log) < env.horizon:
        acts = np.zeros(env.n_agents, dtype=np.int64)
        lps = np.zeros(env.n_agents)
        for i, pol in enumerate(policies):
            a, lp = pol.act(states[i], rng)
            if not 0 <= a < env.n_actions:
                raise ValueError(f"policy {i} emitted invalid action {a}")
            acts[i] = a
            lps[i] = lp
        state_log.append(states.copy())
        action_log.append(acts)
        logp_log.append(lps)
        states, hidden_reward, done, info = env.step(acts)
        total += hidden_reward
        reward_log.append(hidden_reward)
        goal = goal or bool(info.get("goal", False))

    return Trajectory(
        states=np.array(state_log),
        actions=np.array(action_log),
        episodic_return=total,
        final_state=states.copy(),
        terminated=goal,
        logps=np.array(logp_log),
        hidden_rewards=np.array(reward_log) if record_hidden else None,
        seed=int(seed),
    )


# ---------------------------------------------------------------------------
# line-delimited trajectory storage (bit-exact round trip)
# ---------------------------------------------------------------------------

def save_trajectories(path, trajectories, header):
    """Write a header line then one JSON record per episode.

    Python's JSON float formatting is shortest-round-trip, so doubles
    survive save/load bit-exactly.
    """
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": "creditshare-trajectories-v1", **header}) + "\n")
        for tr in trajectories:
            rec = {
                "states": tr.states.tolist(),
                "actions": tr.actions.tolist(),
                "episodic_return": tr.episodic_return,
                "final_state": tr.final_state.tolist(),
                "terminated": tr.terminated,
                "logps": tr.logps.tolist() if tr.logps is not None else None,
                "hidden_rewards": (tr.hidden_rewards.tolist()
                                   if tr.hidden_rewards is not None else None),
                "seed": tr.seed,
            }
            fh.write(json.dumps(rec) + "\n")


def load_trajectories(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "creditshare-trajectories-v1":
            raise ValueError(f"unrecognized trajectory file: {path}")
        out = []
        for line in fh:
            rec = json.loads(line)
            out.append(Trajectory(
                states=np.array(rec["states"]),
                actions=np.array(rec["actions"], dtype=np.int64),
                episodic_return=rec["episodic_return"],
                final_state=np.array(rec["final_state"]),
                terminated=rec["terminated"],
                logps=np.array(rec["logps"]) if rec["logps"] is not None else None,
                hidden_rewards=(np.array(rec["hidden_rewards"])
                                if rec["hidden_rewards"] is not None else None),
                seed=rec["seed"],
            ))
    return header, out
