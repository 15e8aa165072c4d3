"""Exact cooperative-game computations on small games.

Coalitions are encoded as bitmasks over players; the value function is a
table of length 2**n with v(empty) == 0. These exact routines are the
ground-truth reference for the sampled estimators in the model.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

MAX_PLAYERS = 12


@dataclass(frozen=True)
class CoalitionalGame:
    n_players: int
    values: np.ndarray  # values[bitmask] = v(coalition)

    def __post_init__(self):
        if not 1 <= self.n_players <= MAX_PLAYERS:
            raise ValueError(f"player count must be in [1, {MAX_PLAYERS}]")
        if len(self.values) != 2 ** self.n_players:
            raise ValueError("value table length must be 2**n_players")
        if self.values[0] != 0.0:
            raise ValueError("v(empty coalition) must be 0")

    def value(self, coalition: int) -> float:
        return float(self.values[coalition])


def random_game(n_players, rng, low=-1.0, high=1.0) -> CoalitionalGame:
    values = rng.uniform(low, high, size=2 ** n_players)
    values[0] = 0.0
    return CoalitionalGame(n_players, values)


def marginal(game: CoalitionalGame, player: int, coalition: int) -> float:
    """v(C + player) - v(C); the player must not already be in C."""
    if coalition & (1 << player):
        raise ValueError(f"player {player} already in coalition {coalition:b}")
    return game.value(coalition | (1 << player)) - game.value(coalition)


def exact_shapley(game: CoalitionalGame, player: int) -> float:
    """Size-weighted sum of marginal contributions over all coalitions."""
    n = game.n_players
    others = [j for j in range(n) if j != player]
    total = 0.0
    for size in range(n):
        weight = math.factorial(size) * math.factorial(n - size - 1) / math.factorial(n)
        for combo in itertools.combinations(others, size):
            c = 0
            for j in combo:
                c |= 1 << j
            total += weight * marginal(game, player, c)
    return total


def shapley_by_permutations(game: CoalitionalGame, player: int) -> float:
    """Mean over all n! orderings of the player's prefix marginal.

    Independent of exact_shapley's weighted-sum path; the two must agree.
    Enumeration is only tractable for small n.
    """
    n = game.n_players
    total = 0.0
    count = 0
    for perm in itertools.permutations(range(n)):
        c = 0
        for j in perm:
            if j == player:
                break
            c |= 1 << j
        total += marginal(game, player, c)
        count += 1
    return total / count


def permutation_prefix_distribution(n_players, player):
    """P(exactly coalition C precedes the player in a uniform permutation).

    Returns a dict bitmask -> probability over subsets of the other players;
    each probability equals the size-based weight in the exact formula.
    """
    if not 1 <= n_players <= MAX_PLAYERS:
        raise ValueError(f"player count must be in [1, {MAX_PLAYERS}]")
    others = [j for j in range(n_players) if j != player]
    dist = {}
    for size in range(n_players):
        p = (math.factorial(size) * math.factorial(n_players - size - 1)
             / math.factorial(n_players))
        for combo in itertools.combinations(others, size):
            c = 0
            for j in combo:
                c |= 1 << j
            dist[c] = p
    return dist
