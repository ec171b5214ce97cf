"""Analysis batches and the four representation metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..nn import sample_categorical
from .estimators import MiEstimate, ksg_mi_cc, mi_cd

METRICS = ("I(Z;L)", "I(Z;V)", "I((Z,Z');A)", "I(Z;Z')")


class InsufficientSamples(ValueError):
    pass


class InapplicableMetric(ValueError):
    pass


@dataclass
class AnalysisSample:
    actions: np.ndarray
    obs: np.ndarray
    next_obs: np.ndarray
    values: np.ndarray
    contexts: np.ndarray
    ts: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.actions.shape[0])

    def latents(self, model, which: str) -> tuple[np.ndarray, np.ndarray]:
        return model.represent(self.obs, which), model.represent(self.next_obs, which)


def _run_episodes(model, env, levels, steps: int, rng, num_envs: int):
    """Roll the stochastic policy until ``steps`` transitions exist; keep finished episodes only."""
    levels = list(levels)
    episodes = []
    live = [None] * num_envs
    states = [None] * num_envs
    obs = np.zeros((num_envs, env.spec.obs_dim))

    def start(i):
        lv = levels[int(rng.integers(len(levels)))]
        states[i], obs[i] = env.reset(lv)
        live[i] = {"context": lv.context_id, "obs": [], "next_obs": [], "actions": [], "rewards": []}

    for i in range(num_envs):
        start(i)
    taken = 0
    while taken < steps:
        acts = sample_categorical(model.policy_logits(obs), rng)
        for i in range(num_envs):
            s, r, d, o = env.step(states[i], int(acts[i]))
            ep = live[i]
            ep["obs"].append(obs[i].copy())
            ep["next_obs"].append(o)
            ep["actions"].append(int(acts[i]))
            ep["rewards"].append(r)
            states[i], obs[i] = s, o
            taken += 1
            if d:
                episodes.append(ep)
                start(i)
    return episodes


def collect_analysis_batch(model, env, levels, rng: np.random.Generator, collection_steps: int = 2 ** 16,
                           n: int = 4096, gamma: float | None = None, num_envs: int = 16) -> AnalysisSample:
    """Sample ``n`` aligned records from ``collection_steps`` of on-policy experience.

    Records come from even timesteps of terminated episodes, never from the step that
    terminates the episode; the paired next observation is therefore an odd timestep.
    """
    gamma = env.spec.gamma if gamma is None else gamma
    episodes = _run_episodes(model, env, levels, collection_steps, rng, num_envs)
    rows = {"actions": [], "obs": [], "next_obs": [], "values": [], "contexts": [], "ts": []}
    for ep in episodes:
        rewards = np.asarray(ep["rewards"])
        length = rewards.size
        rtg = np.zeros(length)
        acc = 0.0
        for t in reversed(range(length)):
            acc = rewards[t] + gamma * acc
            rtg[t] = acc
        for t in range(0, length - 1, 2):
            rows["actions"].append(ep["actions"][t])
            rows["obs"].append(ep["obs"][t])
            rows["next_obs"].append(ep["next_obs"][t])
            rows["values"].append(rtg[t])
            rows["contexts"].append(ep["context"])
            rows["ts"].append(t)
    usable = len(rows["actions"])
    if usable < n:
        raise InsufficientSamples(f"only {usable} usable timesteps, {n - usable} short of n={n}")
    pick = np.sort(rng.choice(usable, size=n, replace=False))
    arr = {k: np.asarray(v)[pick] for k, v in rows.items()}
    return AnalysisSample(arr["actions"].astype(np.int64), arr["obs"], arr["next_obs"], arr["values"],
                          arr["contexts"].astype(np.int64), arr["ts"].astype(np.int64),
                          meta={"collection_steps": collection_steps, "n": n, "usable": usable,
                                "episodes": len(episodes), "gamma": gamma})


def standardize(x) -> np.ndarray:
    """Zero mean, unit variance per column; constant columns are only centred."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    sd = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def metric_quartet(z, z_next, values, actions, contexts, k: int = 3, seed: int = 0) -> dict[str, MiEstimate]:
    z, z_next, v = standardize(z), standardize(z_next), standardize(values)
    return {
        "I(Z;L)": mi_cd(z, contexts, k, seed, tag="I(Z;L)"),
        "I(Z;V)": ksg_mi_cc(z, v, k, seed, tag="I(Z;V)"),
        "I((Z,Z');A)": mi_cd(np.concatenate([z, z_next], axis=1), actions, k, seed, tag="I((Z,Z');A)"),
        "I(Z;Z')": ksg_mi_cc(z, z_next, k, seed, tag="I(Z;Z')"),
    }


def compression_efficiency(i_z, i_o) -> float:
    iz = i_z.value if isinstance(i_z, MiEstimate) else float(i_z)
    io = i_o.value if isinstance(i_o, MiEstimate) else float(i_o)
    if io <= 0:
        raise InapplicableMetric("compression efficiency needs I(O;.) > 0")
    return min(max(iz, 0.0) / io, 1.0)


@dataclass
class MiReport:
    representations: dict          # name -> {metric -> MiEstimate}
    baseline: dict                 # metric -> MiEstimate, observation in place of latent
    meta: dict = field(default_factory=dict)

    def efficiency(self, rep: str, metric: str) -> float | None:
        try:
            return compression_efficiency(self.representations[rep][metric], self.baseline[metric])
        except InapplicableMetric:
            return None

    def value(self, rep: str, metric: str, clamp: bool = True) -> float:
        est = self.baseline[metric] if rep == "obs" else self.representations[rep][metric]
        return est.clamped if clamp else est.value

    def records(self) -> list[dict]:
        out = []
        for rep, table in [*self.representations.items(), ("obs", self.baseline)]:
            for metric in METRICS:
                est = table[metric]
                rec = {"metric": metric, "representation": rep, "value": est.clamped, "raw": est.value,
                       "k": est.k, "n": est.n, "clamped": est.value < 0}
                if rep != "obs":
                    rec["compression"] = self.efficiency(rep, metric)
                out.append(rec)
        return out

    def to_text(self) -> str:
        lines = [json.dumps({"meta": self.meta}, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.records()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MiReport":
        lines = [json.loads(s) for s in text.splitlines() if s.strip()]
        meta = lines[0].get("meta", {})
        reps: dict = {}
        base: dict = {}
        for r in lines[1:]:
            est = MiEstimate(r["raw"], tag=r["metric"], k=r["k"], n=r["n"])
            (base if r["representation"] == "obs" else reps.setdefault(r["representation"], {}))[r["metric"]] = est
        return cls(reps, base, meta)


def representation_names(model) -> tuple[str, ...]:
    return ("shared",) if model.coupled else ("actor", "critic")


def compute_metric_suite(sample: AnalysisSample, model, k: int = 3, seed: int = 0,
                         include_baseline: bool = True) -> MiReport:
    reps = {}
    for name in representation_names(model):
        which = "actor" if name == "shared" else name
        z, zn = sample.latents(model, which)
        reps[name] = metric_quartet(z, zn, sample.values, sample.actions, sample.contexts, k, seed)
    base = {}
    if include_baseline:
        base = metric_quartet(sample.obs, sample.next_obs, sample.values, sample.actions, sample.contexts, k, seed)
    return MiReport(reps, base, meta={"n": sample.n, "k": k, "seed": seed, **sample.meta})
