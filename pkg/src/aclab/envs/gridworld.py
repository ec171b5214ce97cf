"""Procedural 7x7 gridworld used as a cheap stand-in for procedurally generated game levels."""
from __future__ import annotations

from collections import deque

import numpy as np

from .base import CmdpSpec, EnvState, LevelContext

MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right
WALL, GOAL = 1.0, -1.0


class GridWorld:
    kind = "gridworld"

    def __init__(self, size: int = 7, view: int = 5, n_walls: int = 10, texture_dim: int = 8,
                 n_actions: int = 15, max_steps: int = 64, goal_reward: float = 1.0,
                 gamma: float = 0.999):
        if n_actions < len(MOVES):
            raise ValueError("need at least the four movement actions")
        if view % 2 != 1:
            raise ValueError("view must be odd")
        self.size, self.view, self.n_walls = size, view, n_walls
        self.texture_dim = texture_dim
        self.goal_reward = goal_reward
        self.spec = CmdpSpec(obs_dim=view * view + 2 + texture_dim, n_actions=n_actions,
                             gamma=gamma, max_episode_len=max_steps)

    def params(self) -> dict:
        return dict(size=self.size, view=self.view, n_walls=self.n_walls,
                    texture_dim=self.texture_dim, n_actions=self.spec.n_actions,
                    max_steps=self.spec.max_episode_len, goal_reward=self.goal_reward,
                    gamma=self.spec.gamma)

    @property
    def reward_bound(self) -> float:
        return 2.0 * abs(self.goal_reward) * self.spec.max_episode_len

    def make_level(self, context_id: int, seed: int) -> LevelContext:
        rng = np.random.default_rng(seed)
        n = self.size
        while True:
            walls = np.zeros((n, n), dtype=bool)
            cells = rng.choice(n * n, size=self.n_walls + 2, replace=False)
            walls.flat[cells[:self.n_walls]] = True
            start = divmod(int(cells[-2]), n)
            goal = divmod(int(cells[-1]), n)
            if abs(start[0] - goal[0]) + abs(start[1] - goal[1]) >= 3 and self._reachable(walls, start, goal):
                break
        texture = rng.standard_normal(self.texture_dim)
        payload = {"walls": walls, "start": start, "goal": goal, "texture": texture}
        return LevelContext(context_id=context_id, seed=int(seed), kind=self.kind, payload=payload)

    @staticmethod
    def _reachable(walls, start, goal) -> bool:
        n = walls.shape[0]
        seen = {start}
        queue = deque([start])
        while queue:
            r, c = queue.popleft()
            if (r, c) == goal:
                return True
            for dr, dc in MOVES:
                nr, nc = r + dr, c + dc
                if 0 <= nr < n and 0 <= nc < n and not walls[nr, nc] and (nr, nc) not in seen:
                    seen.add((nr, nc))
                    queue.append((nr, nc))
        return False

    def observe(self, state: EnvState) -> np.ndarray:
        p = state.level.payload
        walls, goal = p["walls"], p["goal"]
        r, c = state.internal
        half = self.view // 2
        n = self.size
        local = np.full((self.view, self.view), WALL)
        r0, c0 = r - half, c - half
        rs, re = max(r0, 0), min(r0 + self.view, n)
        cs, ce = max(c0, 0), min(c0 + self.view, n)
        local[rs - r0:re - r0, cs - c0:ce - c0] = walls[rs:re, cs:ce]
        gr, gc = goal[0] - r0, goal[1] - c0
        if 0 <= gr < self.view and 0 <= gc < self.view:
            local[gr, gc] = GOAL
        offset = np.array([goal[0] - r, goal[1] - c], dtype=np.float64) / (n - 1)
        return np.concatenate([local.reshape(-1), offset, p["texture"]])

    def reset(self, level: LevelContext) -> tuple[EnvState, np.ndarray]:
        state = EnvState(level=level, step_index=0, internal=tuple(level.payload["start"]))
        return state, self.observe(state)

    def step(self, state: EnvState, action: int) -> tuple[EnvState, float, bool, np.ndarray]:
        if state.done:
            raise RuntimeError("step() called on a terminal state")
        if not 0 <= action < self.spec.n_actions:
            raise ValueError(f"invalid action {action}")
        r, c = state.internal
        if action < len(MOVES):
            dr, dc = MOVES[action]
            nr, nc = r + dr, c + dc
            walls = state.level.payload["walls"]
            if 0 <= nr < self.size and 0 <= nc < self.size and not walls[nr, nc]:
                r, c = nr, nc
        reached = (r, c) == tuple(state.level.payload["goal"])
        t = state.step_index + 1
        done = reached or t >= self.spec.max_episode_len
        nxt = EnvState(state.level, t, (r, c), done=done)
        return nxt, (self.goal_reward if reached else 0.0), done, self.observe(nxt)
