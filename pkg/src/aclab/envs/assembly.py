"""Assembly-line inspection: accept or reject each part, in order.

A part's spec vector determines whether it is defective through a fixed rule
(defective iff the first spec coordinate is positive), so the optimal action is
a function of the current observation while the raw flag is never shown.
"""
from __future__ import annotations

import numpy as np

from .base import CmdpSpec, EnvState, LevelContext, UnsupportedEnvironment

ACCEPT, REJECT = 0, 1


class AssemblyLine:
    kind = "assembly"

    def __init__(self, n_min: int = 2, n_max: int = 8, p_fail: float = 0.3, spec_dim: int = 4,
                 r_plus: float = 1.0, r_minus: float = -1.0, gamma: float = 0.999):
        if not 1 <= n_min <= n_max:
            raise ValueError("need 1 <= n_min <= n_max")
        if not r_plus > r_minus:
            raise ValueError("r_plus must exceed r_minus")
        self.n_min, self.n_max = n_min, n_max
        self.p_fail = p_fail
        self.spec_dim = spec_dim
        self.r_plus, self.r_minus = r_plus, r_minus
        self.spec = CmdpSpec(obs_dim=2 * n_max + n_max * spec_dim + spec_dim, n_actions=2,
                             gamma=gamma, max_episode_len=n_max)

    def params(self) -> dict:
        return dict(n_min=self.n_min, n_max=self.n_max, p_fail=self.p_fail, spec_dim=self.spec_dim,
                    r_plus=self.r_plus, r_minus=self.r_minus, gamma=self.spec.gamma)

    @property
    def reward_bound(self) -> float:
        """D with |V| <= D/2 for every state and policy."""
        return 2.0 * max(abs(self.r_plus), abs(self.r_minus)) * self.spec.max_episode_len

    # --- levels ---------------------------------------------------------------

    def make_level(self, context_id: int, seed: int, p_fail: float | None = None) -> LevelContext:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(self.n_min, self.n_max + 1))
        p = self.p_fail if p_fail is None else p_fail
        flags = rng.random(n) < p
        return self.level_from_flags(context_id, flags, seed, rng=rng, p_fail=p)

    def level_from_flags(self, context_id: int, flags, seed: int = 0, rng=None,
                         p_fail: float | None = None) -> LevelContext:
        flags = np.asarray(flags, dtype=bool)
        if not 1 <= flags.size <= self.n_max:
            raise ValueError(f"part count must be in [1, {self.n_max}]")
        rng = np.random.default_rng(seed) if rng is None else rng
        specs = rng.uniform(-1.0, 1.0, size=(flags.size, self.spec_dim))
        key = rng.uniform(0.2, 1.0, size=flags.size)
        specs[:, 0] = np.where(flags, key, -key)
        payload = {"flags": flags, "specs": specs, "n_parts": int(flags.size),
                   "p_fail": self.p_fail if p_fail is None else float(p_fail),
                   "realised_p_fail": float(flags.mean())}
        return LevelContext(context_id=context_id, seed=int(seed), kind=self.kind, payload=payload)

    # --- dynamics -------------------------------------------------------------

    def observe(self, state: EnvState) -> np.ndarray:
        specs = state.level.payload["specs"]
        n = specs.shape[0]
        t = state.step_index
        nm, sd = self.n_max, self.spec_dim
        obs = np.zeros(self.spec.obs_dim)
        # after an early failure the uninspected parts stay on the line
        on_line = np.arange(n) >= t
        if not state.done:
            obs[t] = 1.0
            obs[2 * nm + nm * sd:] = specs[t]
        block = np.zeros((nm, sd))
        block[:n][on_line] = specs[on_line]
        obs[nm:nm + nm * sd] = block.reshape(-1)
        obs[nm + nm * sd:2 * nm + nm * sd][:n] = on_line
        return obs

    def reset(self, level: LevelContext) -> tuple[EnvState, np.ndarray]:
        state = EnvState(level=level, step_index=0, internal="inspect")
        return state, self.observe(state)

    def step(self, state: EnvState, action: int) -> tuple[EnvState, float, bool, np.ndarray]:
        if state.done:
            raise RuntimeError("step() called on a terminal state")
        if action not in (ACCEPT, REJECT):
            raise ValueError(f"invalid action {action}")
        flags = state.level.payload["flags"]
        t = state.step_index
        defective = bool(flags[t])
        correct = (action == REJECT) == defective
        reward = self.r_plus if correct else self.r_minus
        if action == ACCEPT and defective:
            nxt = EnvState(state.level, t + 1, "failed", done=True)
        elif t + 1 >= flags.size:
            nxt = EnvState(state.level, t + 1, "complete", done=True)
        else:
            nxt = EnvState(state.level, t + 1, "inspect")
        return nxt, reward, nxt.done, self.observe(nxt)

    # --- exact analysis helpers ----------------------------------------------

    def enumerate_states(self, level: LevelContext) -> list[tuple[EnvState, np.ndarray]]:
        """Every reachable state of ``level``: inspections, early failures, completion."""
        flags = level.payload["flags"]
        out = []
        for t in range(flags.size):
            s = EnvState(level, t, "inspect")
            out.append((s, self.observe(s)))
        for t in range(flags.size):
            if flags[t]:
                s = EnvState(level, t + 1, "failed", done=True)
                out.append((s, self.observe(s)))
        s = EnvState(level, flags.size, "complete", done=True)
        out.append((s, self.observe(s)))
        return out

    def optimal_action(self, state: EnvState) -> int:
        if state.done:
            raise ValueError("no action in a terminal state")
        return REJECT if state.level.payload["flags"][state.step_index] else ACCEPT

    def optimal_value(self, state: EnvState, gamma: float | None = None) -> float:
        """Backward induction: V*(x) = r_plus + gamma * V*(next), terminal value 0."""
        if state.done:
            return 0.0
        g = self.spec.gamma if gamma is None else gamma
        v = 0.0
        for _ in range(state.level.payload["n_parts"] - state.step_index):
            v = self.r_plus + g * v
        return v

    def optimal_return(self, level: LevelContext, gamma: float | None = None) -> float:
        return self.optimal_value(self.reset(level)[0], gamma)


def assembly_optimal_policy(env: AssemblyLine, state: EnvState) -> int:
    return env.optimal_action(state)


def assembly_optimal_value(env: AssemblyLine, state: EnvState, gamma: float) -> float:
    return env.optimal_value(state, gamma)


def enumerate_states(env, level: LevelContext):
    if not hasattr(env, "enumerate_states"):
        raise UnsupportedEnvironment(f"{getattr(env, 'kind', env)} is not enumerable")
    return env.enumerate_states(level)
