"""Independent per-agent actor-critic learners.

Each agent owns its own actor and critic; updates read only that agent's
states, actions and decomposer-assigned credits. Credits enter as dense
per-step rewards without any reshaping.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .nn import MLP
from .optim import Adam, PoisonedUpdateError


@dataclass
class PolicyConfig:
    state_dim: int
    n_actions: int
    hidden: tuple = (64, 64)
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.01


class RandomPolicy:
    """Uniform policy used for buffer warmup."""

    def __init__(self, n_actions):
        self.n_actions = n_actions

    def act(self, state, rng):
        a = int(rng.integers(self.n_actions))
        return a, float(-np.log(self.n_actions))


def _log_softmax_np(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class ActorCritic:
    def __init__(self, cfg: PolicyConfig, rng):
        self.cfg = cfg
        self.actor = MLP(cfg.state_dim, list(cfg.hidden), cfg.n_actions, rng)
        self.critic = MLP(cfg.state_dim, list(cfg.hidden), 1, rng)
        self.optimizer = Adam(self.actor.params() + self.critic.params(), lr=cfg.lr)

    def act(self, state, rng, deterministic=False):
        """Sample an action and its log-probability (fast numpy path)."""
        logits = self.actor.forward_np(state[None])[0]
        logp = _log_softmax_np(logits)
        if deterministic:
            a = int(np.argmax(logp))
        else:
            a = int(rng.choice(len(logp), p=np.exp(logp)))
        return a, float(logp[a])

    def action_probs(self, state):
        return np.exp(_log_softmax_np(self.actor.forward_np(state[None])[0]))

    def values(self, states):
        return self.critic.forward_np(states)[:, 0]

    def params(self):
        return self.actor.params() + self.critic.params()

    # checkpoint ----------------------------------------------------------
    def save(self, path):
        arrays = {f"p{i}": p.data for i, p in enumerate(self.params())}
        np.savez(path, config_json=json.dumps(asdict(self.cfg)), **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as blob:
            raw = json.loads(str(blob["config_json"]))
            raw["hidden"] = tuple(raw["hidden"])
            cfg = PolicyConfig(**raw)
            pol = cls(cfg, np.random.default_rng(0))
            for i, p in enumerate(pol.params()):
                p.data = blob[f"p{i}"].copy()
        return pol


def gae_advantages(rewards, values, last_value, gamma, lam):
    """Lambda-weighted TD advantages over a dense reward sequence."""
    t_len = len(rewards)
    adv = np.zeros(t_len)
    running = 0.0
    next_value = last_value
    for t in range(t_len - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv


@dataclass
class AgentRollout:
    """One agent's slice of an episode plus its assigned credits."""

    states: np.ndarray    # [T, state_dim]
    actions: np.ndarray   # [T]
    logps: np.ndarray     # [T] behavior log-probs at collection time
    credits: np.ndarray   # [T] decomposer output, never an env reward
    terminal: bool        # True -> no bootstrap from the final state
    final_state: np.ndarray


def ppo_update(agent: ActorCritic, rollouts: list[AgentRollout]):
    """Clipped-surrogate update on a batch of this agent's rollouts.

    Returns statistics: mean ratio, clip fraction, entropy, losses.
    """
    if not rollouts:
        raise ValueError("empty rollout batch")
    cfg = agent.cfg
    states = np.concatenate([r.states for r in rollouts])
    actions = np.concatenate([r.actions for r in rollouts])
    old_logp = np.concatenate([r.logps for r in rollouts])

    adv_parts, ret_parts = [], []
    for r in rollouts:
        values = agent.values(r.states)
        last = 0.0 if r.terminal else float(agent.values(r.final_state[None])[0])
        adv = gae_advantages(r.credits, values, last, cfg.gamma, cfg.gae_lambda)
        adv_parts.append(adv)
        ret_parts.append(adv + values)
    advantages = np.concatenate(adv_parts)
    returns = np.concatenate(ret_parts)
    advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    n = len(states)
    idx = np.arange(n)
    stats = {}
    for _ in range(cfg.epochs):
        with Tape() as tape:
            logits = agent.actor(Tensor(states))
            logp_all = ad.log_softmax(logits)
            logp = logp_all[idx, actions]
            ratio = ad.texp(logp - Tensor(old_logp))
            clipped = ad.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
            adv_t = Tensor(advantages)
            surrogate = ad.minimum(ratio * adv_t, clipped * adv_t).mean()
            value_pred = ad.reshape(agent.critic(Tensor(states)), (n,))
            verr = value_pred - Tensor(returns)
            value_loss = (verr * verr).mean()
            entropy = (ad.texp(logp_all) * logp_all).sum(axis=-1).mean() * -1.0
            loss = (-1.0 * surrogate + cfg.value_coef * value_loss
                    - cfg.entropy_coef * entropy)
        backward(loss, tape)
        try:
            agent.optimizer.step()
        finally:
            agent.optimizer.zero_grad()
        stats = {
            "loss": loss.item(),
            "surrogate": surrogate.item(),
            "value_loss": value_loss.item(),
            "entropy": entropy.item(),
            "mean_ratio": float(ratio.data.mean()),
            "clip_fraction": float(np.mean(
                (ratio.data < 1.0 - cfg.clip_eps) | (ratio.data > 1.0 + cfg.clip_eps))),
        }
    return stats
