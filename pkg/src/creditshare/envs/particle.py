"""Particle-world scenarios with simplified discrete-time kinematics.

Two scenarios share the physics:
  * coop_nav: agents should cover landmarks; hidden per-step reward is
    minus the sum over landmarks of the closest-agent distance, minus a
    penalty per colliding agent pair.
  * predator_prey: agents chase scripted prey; hidden per-step reward is
    +bonus per prey caught this step minus a penalty proportional to the
    mean predator-to-nearest-prey distance.

Actions are {no-op, up, down, left, right} thrusts. Velocities damp by a
configurable factor each step and positions clip to the square arena.
All rewards are accumulated silently and only their episode sum is ever
revealed to a learner.
"""

from __future__ import annotations

import numpy as np

from .base import EnvConfig, EnvConfigError, LifecycleError

# action index -> thrust direction (x, y); 0 is no-op
THRUSTS = np.array([
    [0.0, 0.0],
    [0.0, 1.0],
    [0.0, -1.0],
    [-1.0, 0.0],
    [1.0, 0.0],
])


def advance(pos, vel, action, accel, damping, arena):
    """One kinematic step for a single body; returns (pos, vel)."""
    vel = vel * (1.0 - damping) + THRUSTS[action] * accel
    pos = np.clip(pos + vel, -arena, arena)
    return pos, vel


def prey_flee_action(prey_pos, prey_vel, predator_positions, accel, damping, arena):
    """Greedy evader: the action whose next position is farthest from the
    nearest predator; ties break toward the lowest action index."""
    best_action, best_dist = 0, -np.inf
    for a in range(len(THRUSTS)):
        nxt, _ = advance(prey_pos, prey_vel, a, accel, damping, arena)
        d = np.min(np.linalg.norm(predator_positions - nxt, axis=1))
        if d > best_dist + 1e-12:
            best_dist = d
            best_action = a
    return best_action


class ParticleEnv:
    """Shared machinery for the two particle scenarios."""

    n_actions = 5

    def __init__(self, config: EnvConfig):
        if config.scenario not in ("coop_nav", "predator_prey"):
            raise EnvConfigError(f"unknown particle scenario {config.scenario!r}")
        self.config = config
        self.n_agents = config.n_agents
        self.horizon = config.horizon
        self.scenario = config.scenario
        if self.scenario == "coop_nav":
            self.n_points = config.n_landmarks or config.n_agents
        else:
            if config.n_prey < 1:
                raise EnvConfigError("predator_prey needs n_prey >= 1")
            self.n_points = config.n_prey
        # own pos + own vel + offset to each landmark/prey
        self.state_dim = 4 + 2 * self.n_points
        self._done = True

    def reset(self, seed=None):
        c = self.config
        rng = np.random.default_rng(seed)
        self.pos = rng.uniform(-c.arena, c.arena, size=(self.n_agents, 2))
        self.vel = np.zeros((self.n_agents, 2))
        self.points = rng.uniform(-c.arena, c.arena, size=(self.n_points, 2))
        self.point_vel = np.zeros((self.n_points, 2))
        self._done = False
        self._t = 0
        return self._states()

    def _states(self):
        out = np.zeros((self.n_agents, self.state_dim))
        for i in range(self.n_agents):
            out[i, :2] = self.pos[i]
            out[i, 2:4] = self.vel[i]
            out[i, 4:] = (self.points - self.pos[i]).ravel()
        return out

    def step(self, actions):
        if self._done:
            raise LifecycleError("step() after episode end")
        c = self.config
        for i in range(self.n_agents):
            a = int(actions[i])
            if not 0 <= a < self.n_actions:
                raise ValueError(f"invalid action {a} for agent {i}")
        if self.scenario == "predator_prey":
            # prey observe pre-move predator positions
            prey_actions = [
                prey_flee_action(self.points[p], self.point_vel[p], self.pos,
                                 c.accel, c.damping, c.arena)
                for p in range(self.n_points)
            ]
        for i in range(self.n_agents):
            self.pos[i], self.vel[i] = advance(
                self.pos[i], self.vel[i], int(actions[i]),
                c.accel, c.damping, c.arena)
        info = {"goal": False}
        if self.scenario == "predator_prey":
            for p in range(self.n_points):
                self.points[p], self.point_vel[p] = advance(
                    self.points[p], self.point_vel[p], prey_actions[p],
                    c.accel, c.damping, c.arena)
            reward, captured = self._predator_reward()
            info["captures"] = captured
            info["goal"] = captured > 0
        else:
            reward = self._coop_nav_reward()
        self._t += 1
        if self._t >= self.horizon:
            self._done = True
        return self._states(), reward, self._done, info

    def _pair_distances(self):
        """dist[i, p] between agent i and landmark/prey p."""
        return np.linalg.norm(self.pos[:, None, :] - self.points[None, :, :], axis=-1)

    def _coop_nav_reward(self):
        c = self.config
        dist = self._pair_distances()
        reward = -float(dist.min(axis=0).sum())
        for i in range(self.n_agents):
            for j in range(i + 1, self.n_agents):
                if np.linalg.norm(self.pos[i] - self.pos[j]) < c.agent_size:
                    reward -= c.collision_penalty
        return reward

    def _predator_reward(self):
        c = self.config
        dist = self._pair_distances()
        captured = int((dist.min(axis=0) < c.capture_radius).sum())
        reward = captured * c.capture_bonus
        reward -= c.distance_penalty * float(dist.min(axis=1).mean())
        return reward, captured


def nearest_prey_distance(state, n_points):
    """Distance from one agent's state vector to its nearest prey/landmark.

    Reads the same relative offsets the reward uses, so evaluation and
    environment agree on the metric.
    """
    offsets = state[4:4 + 2 * n_points].reshape(n_points, 2)
    return float(np.min(np.linalg.norm(offsets, axis=1)))
