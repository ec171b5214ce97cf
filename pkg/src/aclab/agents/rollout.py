from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import log_softmax, sample_categorical


class VecEnv:
    """``num_envs`` independent episodes; a finished episode restarts on a level drawn uniformly."""

    def __init__(self, env, levels, num_envs: int, rng: np.random.Generator):
        self.env = env
        self.levels = list(levels)
        self.num_envs = num_envs
        self.rng = rng
        self.states = []
        self.obs = np.zeros((num_envs, env.spec.obs_dim))
        self.ep_return = np.zeros(num_envs)
        self.ep_disc_return = np.zeros(num_envs)
        self.ep_len = np.zeros(num_envs, dtype=np.int64)
        self.finished: list[dict] = []
        for i in range(num_envs):
            s, o = env.reset(self._draw_level())
            self.states.append(s)
            self.obs[i] = o

    def _draw_level(self):
        return self.levels[int(self.rng.integers(len(self.levels)))]

    def step(self, actions):
        n = self.num_envs
        rewards = np.zeros(n)
        dones = np.zeros(n, dtype=bool)
        next_obs = np.zeros_like(self.obs)
        contexts = np.array([s.level.context_id for s in self.states])
        ts = np.array([s.step_index for s in self.states])
        gamma = self.env.spec.gamma
        for i in range(n):
            s, r, d, o = self.env.step(self.states[i], int(actions[i]))
            rewards[i], dones[i], next_obs[i] = r, d, o
            self.ep_disc_return[i] += gamma ** self.ep_len[i] * r
            self.ep_return[i] += r
            self.ep_len[i] += 1
            if d:
                self.finished.append({"return": float(self.ep_return[i]),
                                      "disc_return": float(self.ep_disc_return[i]),
                                      "length": int(self.ep_len[i]), "context_id": int(s.level.context_id)})
                self.ep_return[i] = self.ep_disc_return[i] = 0.0
                self.ep_len[i] = 0
                s, o = self.env.reset(self._draw_level())
            self.states[i] = s
            self.obs[i] = o
        return rewards, dones, next_obs, contexts, ts

    def pop_finished(self) -> list[dict]:
        out, self.finished = self.finished, []
        return out


@dataclass
class RolloutBuffer:
    obs: np.ndarray          # (T, N, D)
    next_obs: np.ndarray     # (T, N, D) observation after the step (terminal obs when done)
    actions: np.ndarray      # (T, N)
    rewards: np.ndarray      # (T, N) raw
    dones: np.ndarray        # (T, N)
    logp: np.ndarray         # (T, N) behaviour log-prob
    logits: np.ndarray       # (T, N, A) behaviour logits
    values: np.ndarray       # (T, N) behaviour value estimate
    contexts: np.ndarray     # (T, N)
    ts: np.ndarray           # (T, N) step index within the episode
    last_values: np.ndarray  # (N,) bootstrap values for the observation after the last step
    adv: np.ndarray | None = None
    returns: np.ndarray | None = None
    train_rewards: np.ndarray | None = None  # rewards used for targets (maybe normalised)

    @property
    def size(self) -> int:
        return self.actions.size

    def flat(self) -> dict:
        t, n = self.actions.shape
        out = {
            "obs": self.obs.reshape(t * n, -1),
            "next_obs": self.next_obs.reshape(t * n, -1),
            "actions": self.actions.reshape(-1),
            "rewards": (self.rewards if self.train_rewards is None else self.train_rewards).reshape(-1),
            "dones": self.dones.reshape(-1),
            "logp_old": self.logp.reshape(-1),
            "old_logits": self.logits.reshape(t * n, -1),
            "values": self.values.reshape(-1),
            "contexts": self.contexts.reshape(-1),
        }
        if self.adv is not None:
            out["adv"] = self.adv.reshape(-1)
            out["returns"] = self.returns.reshape(-1)
        return out


def collect_rollout(model, vec: VecEnv, rng: np.random.Generator, length: int) -> RolloutBuffer:
    n, d = vec.num_envs, vec.env.spec.obs_dim
    a_dim = model.n_actions
    obs = np.zeros((length, n, d))
    next_obs = np.zeros((length, n, d))
    actions = np.zeros((length, n), dtype=np.int64)
    rewards = np.zeros((length, n))
    dones = np.zeros((length, n), dtype=bool)
    logp = np.zeros((length, n))
    logits = np.zeros((length, n, a_dim))
    values = np.zeros((length, n))
    contexts = np.zeros((length, n), dtype=np.int64)
    ts = np.zeros((length, n), dtype=np.int64)
    for t in range(length):
        obs[t] = vec.obs
        f = model.forward(vec.obs, policy=True, value=True)
        a = sample_categorical(f.logits, rng)
        logits[t] = f.logits
        logp[t] = log_softmax(f.logits)[np.arange(n), a]
        values[t] = f.value
        actions[t] = a
        rewards[t], dones[t], next_obs[t], contexts[t], ts[t] = vec.step(a)
    last_values = model.value(vec.obs)
    return RolloutBuffer(obs, next_obs, actions, rewards, dones, logp, logits, values, contexts, ts,
                         last_values)


def compute_gae(rewards, values, dones, last_values, gamma: float, lam: float):
    """Backward GAE recursion over (T, N) arrays. Returns (advantages, value targets)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(rewards)
    running = np.zeros_like(np.asarray(last_values, dtype=np.float64))
    next_v = np.asarray(last_values, dtype=np.float64)
    for t in reversed(range(rewards.shape[0])):
        delta = rewards[t] + gamma * notdone[t] * next_v - values[t]
        running = delta + gamma * lam * notdone[t] * running
        adv[t] = running
        next_v = values[t]
    return adv, adv + values


class RunningMeanStd:
    def __init__(self):
        self.mean = 0.0
        self.var = 1.0
        self.count = 1e-4

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64)
        b_mean, b_var, b_count = x.mean(), x.var(), x.size
        delta = b_mean - self.mean
        tot = self.count + b_count
        self.mean += delta * b_count / tot
        m2 = self.var * self.count + b_var * b_count + delta ** 2 * self.count * b_count / tot
        self.var = m2 / tot
        self.count = tot


class ReturnNormalizer:
    """Divides rewards by the running std of per-env discounted returns."""

    def __init__(self, num_envs: int, gamma: float, enabled: bool = True, floor: float = 1e-8):
        self.enabled = enabled
        self.gamma = gamma
        self.floor = floor
        self.stats = RunningMeanStd()
        self.ret = np.zeros(num_envs)

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.stats.var + self.floor))

    def __call__(self, rewards: np.ndarray, dones: np.ndarray) -> np.ndarray:
        """Process a (T, N) block in time order and return the scaled rewards."""
        if not self.enabled:
            return np.asarray(rewards, dtype=np.float64).copy()
        out = np.zeros_like(rewards, dtype=np.float64)
        for t in range(rewards.shape[0]):
            self.ret = self.ret * self.gamma + rewards[t]
            self.stats.update(self.ret)
            out[t] = rewards[t] / self.scale
            self.ret = np.where(dones[t], 0.0, self.ret)
        return out
