from .base import (EnvConfig, EnvConfigError, LifecycleError, Trajectory,
                   load_trajectories, run_episode, save_trajectories)
from .gridworld import DEFAULT_LAYOUT, Layout, TwoRoomEnv
from .particle import ParticleEnv, nearest_prey_distance, prey_flee_action


def make_env(config: EnvConfig):
    if config.scenario == "alice_bob":
        return TwoRoomEnv(config)
    if config.scenario in ("coop_nav", "predator_prey"):
        return ParticleEnv(config)
    raise EnvConfigError(f"unknown scenario {config.scenario!r}")
