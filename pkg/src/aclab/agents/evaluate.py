from __future__ import annotations

import numpy as np

from ..nn import sample_categorical, softmax


def evaluate_returns(model, env, levels, episodes: int, rng: np.random.Generator, greedy: bool = False,
                     discounted: bool = False) -> float:
    """Mean episode return over ``episodes`` rollouts, cycling through ``levels`` in order."""
    levels = list(levels)
    states, obs = [], np.zeros((episodes, env.spec.obs_dim))
    for i in range(episodes):
        s, o = env.reset(levels[i % len(levels)])
        states.append(s)
        obs[i] = o
    totals = np.zeros(episodes)
    disc = np.ones(episodes)
    active = np.ones(episodes, dtype=bool)
    gamma = env.spec.gamma if discounted else 1.0
    while active.any():
        idx = np.flatnonzero(active)
        logits = model.policy_logits(obs[idx])
        acts = np.argmax(logits, axis=1) if greedy else sample_categorical(logits, rng)
        for j, a in zip(idx, acts):
            s, r, d, o = env.step(states[j], int(a))
            totals[j] += disc[j] * r
            disc[j] *= gamma
            states[j], obs[j] = s, o
            if d:
                active[j] = False
    return float(totals.mean())


def assembly_policy_return(model, env, level, gamma: float = 1.0) -> float:
    """Exact expected return of the model's stochastic policy on one assembly level."""
    flags = level.payload["flags"]
    s, _ = env.reset(level)
    obs = []
    for t in range(flags.size):
        obs.append(env.observe(type(s)(level, t, "inspect")))
    probs = softmax(model.policy_logits(np.array(obs)))
    v = 0.0
    for t in reversed(range(flags.size)):
        p_acc, p_rej = probs[t, 0], probs[t, 1]
        if flags[t]:
            v = p_acc * env.r_minus + p_rej * (env.r_plus + gamma * v)
        else:
            v = p_acc * (env.r_plus + gamma * v) + p_rej * (env.r_minus + gamma * v)
    return float(v)


def assembly_expected_return(model, env, levels, gamma: float = 1.0) -> float:
    """Level-averaged exact expected return (levels weighted uniformly)."""
    return float(np.mean([assembly_policy_return(model, env, lv, gamma) for lv in levels]))
