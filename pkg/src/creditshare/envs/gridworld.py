"""Two-room key/door gridworld with an episode-end-only reward.

Two agents spawn locked in separate rooms. Agent 0 can touch the key in
her room, which opens agent 1's door; agent 1 must then reach the second
key to open agent 0's door; finally both must reach the treasure cell.
The only reward signal is the episodic sum: -0.2 per wall/closed-door
bump, +200 once both agents have reached the treasure.

Layout is data, not code: a character grid with
    '#' wall        '.' floor
    'a' key opened-by-agent-0 (unlocks door 'B')
    'b' key opened-by-agent-1 (unlocks door 'A')
    'A' agent 0's door   'B' agent 1's door
    '1' agent 0 spawn    '2' agent 1 spawn
    'T' treasure
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .base import EnvConfig, EnvConfigError, LifecycleError

WALL_PENALTY = -0.2
TREASURE_REWARD = 200.0

DEFAULT_LAYOUT = """\
###########
#...#.#...#
#.1aAbB2..#
#...#.#...#
#####.#####
#####T#####
###########
"""

# actions: 0 up, 1 down, 2 left, 3 right (row/col deltas)
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


class Layout:
    """Parsed grid; rejects geometries that break the key/door ordering."""

    SPECIALS = "ab AB 1 2 T".replace(" ", "")

    def __init__(self, text):
        rows = [list(line) for line in text.strip("\n").split("\n")]
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise EnvConfigError("ragged layout: all rows must share one width")
        self.grid = rows
        self.height = len(rows)
        self.width = widths.pop()
        self.cells = {}
        for ch in self.SPECIALS:
            found = [(r, c) for r in range(self.height) for c in range(self.width)
                     if rows[r][c] == ch]
            if len(found) != 1:
                raise EnvConfigError(f"layout needs exactly one {ch!r} cell")
            self.cells[ch] = found[0]
        legal = set(self.SPECIALS) | {"#", "."}
        for r in range(self.height):
            for c in range(self.width):
                if rows[r][c] not in legal:
                    raise EnvConfigError(f"unknown layout character {rows[r][c]!r}")
        self._check_ordering()

    def passable(self, cell, door_a_open, door_b_open):
        r, c = cell
        if not (0 <= r < self.height and 0 <= c < self.width):
            return False
        ch = self.grid[r][c]
        if ch == "#":
            return False
        if ch == "A":
            return door_a_open
        if ch == "B":
            return door_b_open
        return True

    def _reachable(self, start, door_a_open, door_b_open):
        seen = {start}
        queue = deque([start])
        while queue:
            r, c = queue.popleft()
            for dr, dc in MOVES:
                nxt = (r + dr, c + dc)
                if nxt not in seen and self.passable(nxt, door_a_open, door_b_open):
                    seen.add(nxt)
                    queue.append(nxt)
        return seen

    def _check_ordering(self):
        """Enforce: key 'a' first, then door B, key 'b', door A, treasure."""
        a_closed = self._reachable(self.cells["1"], False, False)
        b_closed = self._reachable(self.cells["2"], False, False)
        if self.cells["a"] not in a_closed:
            raise EnvConfigError("agent 0 cannot reach key 'a' from spawn")
        for target, name in ((self.cells["b"], "key 'b'"), (self.cells["T"], "treasure")):
            if target in a_closed or target in b_closed:
                raise EnvConfigError(f"{name} reachable before any door opens")
        b_open = self._reachable(self.cells["2"], False, True)
        if self.cells["b"] not in b_open:
            raise EnvConfigError("agent 1 cannot reach key 'b' after door B opens")
        from_a = self._reachable(self.cells["1"], True, True)
        from_b = self._reachable(self.cells["2"], True, True)
        if self.cells["T"] not in from_a or self.cells["T"] not in from_b:
            raise EnvConfigError("treasure unreachable with both doors open")


class TwoRoomEnv:
    """Deterministic gridworld; per-agent state is own position + flags."""

    n_actions = 4
    state_dim = 5  # row, col (normalized), door A open, door B open, reached self

    def __init__(self, config: EnvConfig):
        if config.n_agents != 2:
            raise EnvConfigError("alice_bob scenario is a 2-agent task")
        self.config = config
        self.layout = Layout(config.layout or DEFAULT_LAYOUT)
        self.n_agents = 2
        self.horizon = config.horizon
        self._done = True

    def reset(self, seed=None):
        # initial state is fixed by the layout; seed accepted for API parity
        self.pos = [self.layout.cells["1"], self.layout.cells["2"]]
        self.door_a_open = False
        self.door_b_open = False
        self.reached = [False, False]
        self._done = False
        self._t = 0
        return self._states()

    def _states(self):
        h, w = self.layout.height - 1, self.layout.width - 1
        out = np.zeros((2, self.state_dim))
        for i, (r, c) in enumerate(self.pos):
            out[i] = (r / h, c / w, float(self.door_a_open),
                      float(self.door_b_open), float(self.reached[i]))
        return out

    def step(self, actions):
        if self._done:
            raise LifecycleError("step() after episode end")
        reward = 0.0
        info = {"wall_hits": [0, 0], "goal": False}
        for i in (0, 1):
            a = int(actions[i])
            if not 0 <= a < 4:
                raise ValueError(f"invalid action {a} for agent {i}")
            dr, dc = MOVES[a]
            target = (self.pos[i][0] + dr, self.pos[i][1] + dc)
            if not self.layout.passable(target, self.door_a_open, self.door_b_open):
                reward += WALL_PENALTY
                info["wall_hits"][i] = 1
                continue
            self.pos[i] = target
            ch = self.layout.grid[target[0]][target[1]]
            if ch == "a" and i == 0:
                self.door_b_open = True
            elif ch == "b" and i == 1:
                self.door_a_open = True
            if ch == "T" and self.door_a_open and self.door_b_open:
                self.reached[i] = True
        if self.reached[0] and self.reached[1]:
            reward += TREASURE_REWARD
            info["goal"] = True
            self._done = True
        self._t += 1
        if self._t >= self.horizon:
            self._done = True
        return self._states(), reward, self._done, info
