"""PPO, PPG and DCPG training loops for coupled and decoupled actor-critic models."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..auxiliary import AuxSuite
from ..nn import AdamState, adam_step
from ..seeding import streams
from .evaluate import evaluate_returns
from .losses import combine, normalize_advantages, ppg_aux_loss, ppo_policy_loss, ppo_value_loss
from .model import ActorCriticModel
from .rollout import ReturnNormalizer, VecEnv, collect_rollout, compute_gae

log = logging.getLogger(__name__)

ALGORITHMS = ("ppo", "ppg", "dcpg")
COUPLINGS = ("coupled", "decoupled")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    gamma: float = 0.999
    gae_lambda: float = 0.95
    num_envs: int = 16
    rollout_len: int = 128
    minibatches: int = 8
    ppo_epochs: int = 3
    actor_epochs: int = 1
    critic_epochs: int = 9
    clip: float = 0.2
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    lr: float = 5e-4
    adam_eps: float = 1e-5
    max_grad_norm: float = 0.5
    norm_returns: bool = True
    norm_adv: bool = True
    n_pi: int = 32
    policy_epochs: int = 1
    aux_epochs: int = 6
    aux_minibatch_size: int = 256
    beta_clone: float = 1.0
    aux_vf_coef: float = 1.0
    dcpg_value_coef: float = 0.0
    dcpg_delayed_coef: float = 1.0
    hidden: int = 64
    latent: int = 32
    width_mult: float = 1.0
    eval_interval: int = 0
    eval_episodes: int = 32
    checkpoint_interval: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 < self.clip < 1:
            raise ConfigError("clip must lie in (0, 1)")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gamma must lie in (0, 1] and gae_lambda in [0, 1]")
        positive = ("num_envs", "rollout_len", "minibatches", "n_pi", "aux_minibatch_size", "hidden",
                    "latent", "lr", "adam_eps", "max_grad_norm", "width_mult", "eval_episodes")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        non_negative = ("ppo_epochs", "actor_epochs", "critic_epochs", "policy_epochs", "aux_epochs",
                        "ent_coef", "vf_coef", "beta_clone", "aux_vf_coef", "dcpg_value_coef",
                        "dcpg_delayed_coef", "eval_interval", "checkpoint_interval")
        for name in non_negative:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    @property
    def batch_size(self) -> int:
        return self.num_envs * self.rollout_len

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class TrainResult:
    model: ActorCriticModel
    log: list
    aux_batch_sizes: list
    steps: int


def _take(data: dict, idx) -> dict:
    return {k: v[idx] for k, v in data.items()}


def _splits(n: int, parts: int, rng: np.random.Generator):
    return np.array_split(rng.permutation(n), parts)


def build_model(env, algorithm: str, coupling: str, cfg: TrainConfig, rng) -> ActorCriticModel:
    hidden = max(1, int(round(cfg.hidden * cfg.width_mult)))
    return ActorCriticModel(env.spec.obs_dim, env.spec.n_actions, coupled=(coupling == "coupled"),
                            hidden=hidden, latent=cfg.latent, aux_value_head=algorithm in ("ppg", "dcpg"),
                            rng=rng)


class _Optimisers:
    def __init__(self, model: ActorCriticModel, cfg: TrainConfig):
        kw = dict(lr=cfg.lr, eps=cfg.adam_eps)
        self.max_norm = cfg.max_grad_norm
        if model.coupled:
            self.shared = AdamState.create(model.params, model.all_keys, **kw)
        else:
            self.actor = AdamState.create(model.params, model.actor_keys, **kw)
            self.critic = AdamState.create(model.params, model.critic_keys, **kw)

    def step(self, model, grads, group: str | None = None):
        state = self.shared if model.coupled else getattr(self, group)
        adam_step(model.params, grads, state, self.max_norm)


def train(algorithm: str, coupling: str, cfg: TrainConfig, env, levels, budget: int, seed: int,
          attachments=(), test_levels=None, logger=None, checkpoint_dir=None) -> TrainResult:
    """Train for ``budget`` environment steps (rounded down to whole rollouts)."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    if coupling not in COUPLINGS:
        raise ConfigError(f"unknown coupling {coupling!r}")
    if budget < 0:
        raise ConfigError("budget must be non-negative")
    cfg.validate()
    rngs = streams(seed)
    model = build_model(env, algorithm, coupling, cfg, rngs["init"])
    aux = AuxSuite(model, attachments, cfg.gamma, rngs["aux"])
    opt = _Optimisers(model, cfg)
    vec = VecEnv(env, levels, cfg.num_envs, rngs["env"])
    normalizer = ReturnNormalizer(cfg.num_envs, cfg.gamma, enabled=cfg.norm_returns)
    phasic = algorithm in ("ppg", "dcpg")
    aux_store: list[dict] = []
    aux_sizes: list[int] = []
    snapshot = model.critic_snapshot() if algorithm == "dcpg" else None
    records = []
    iterations = budget // cfg.batch_size
    steps = 0
    for it in range(iterations):
        buf = collect_rollout(model, vec, rngs["policy"], cfg.rollout_len)
        steps += buf.size
        buf.train_rewards = normalizer(buf.rewards, buf.dones)
        buf.adv, buf.returns = compute_gae(buf.train_rewards, buf.values, buf.dones, buf.last_values,
                                           cfg.gamma, cfg.gae_lambda)
        data = buf.flat()
        if snapshot is not None:
            data["delayed"] = model.snapshot_value(snapshot, data["obs"])
        if not phasic:
            stats = _ppo_update(model, data, cfg, opt, aux, rngs["update"])
        else:
            stats = _policy_phase(model, data, cfg, opt, aux, rngs["update"], algorithm)
            aux_store.append({"obs": data["obs"], "returns": data["returns"]})
            if len(aux_store) == cfg.n_pi:
                size = sum(d["obs"].shape[0] for d in aux_store)
                aux_sizes.append(size)
                stats.update(_aux_phase(model, aux_store, cfg, opt, rngs["update"]))
                stats["aux_batch_size"] = size
                aux_store = []
                if algorithm == "dcpg":
                    snapshot = model.critic_snapshot()
        finished = vec.pop_finished()
        rec = {"step": steps, "iteration": it + 1,
               "train_return": float(np.mean([e["return"] for e in finished])) if finished else None,
               "episodes": len(finished)}
        rec.update(stats)
        if test_levels is not None and cfg.eval_interval and (it + 1) % cfg.eval_interval == 0:
            rec["test_return"] = evaluate_returns(model, env, test_levels, cfg.eval_episodes, rngs["eval"])
        records.append(rec)
        if logger is not None:
            logger(rec)
        if checkpoint_dir is not None and cfg.checkpoint_interval and (it + 1) % cfg.checkpoint_interval == 0:
            model.save(Path(checkpoint_dir) / f"step_{steps:09d}.npz")
    if checkpoint_dir is not None:
        model.save(Path(checkpoint_dir) / "final.npz")
    return TrainResult(model=model, log=records, aux_batch_sizes=aux_sizes, steps=steps)


def _mean_logs(logs: list[dict]) -> dict:
    out: dict = {}
    for rec in logs:
        for k, v in rec.items():
            out.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in out.items()}


def _ppo_update(model, data, cfg: TrainConfig, opt, aux: AuxSuite, rng) -> dict:
    n = data["actions"].shape[0]
    logs = []
    if model.coupled:
        for _ in range(cfg.ppo_epochs):
            for idx in _splits(n, cfg.minibatches, rng):
                mb = _take(data, idx)
                f = model.forward(mb["obs"])
                lp, gp, info = ppo_policy_loss(model, mb, cfg.clip, cfg.ent_coef, cfg.norm_adv, fwd=f)
                lv, gv, _ = ppo_value_loss(model, mb, fwd=f)
                ga, alog = aux.losses(model, mb, None, info["adv_norm"])
                opt.step(model, combine(gp, gv, ga, scales=[1.0, cfg.vf_coef, 1.0]))
                aux.after_step(model, None)
                logs.append({"policy_loss": info["policy_loss"], "value_loss": lv,
                             "entropy": info["entropy"], **alog})
        return _mean_logs(logs)
    for _ in range(cfg.actor_epochs):
        for idx in _splits(n, cfg.minibatches, rng):
            mb = _take(data, idx)
            lp, gp, info = ppo_policy_loss(model, mb, cfg.clip, cfg.ent_coef, cfg.norm_adv)
            ga, alog = aux.losses(model, mb, "actor", info["adv_norm"])
            opt.step(model, combine(gp, ga), "actor")
            aux.after_step(model, "actor")
            logs.append({"policy_loss": info["policy_loss"], "entropy": info["entropy"], **alog})
    for _ in range(cfg.critic_epochs):
        for idx in _splits(n, cfg.minibatches, rng):
            mb = _take(data, idx)
            lv, gv, _ = ppo_value_loss(model, mb)
            ga, alog = aux.losses(model, mb, "critic", normalize_advantages(mb["adv"]))
            opt.step(model, combine(gv, ga, scales=[cfg.vf_coef, 1.0]), "critic")
            aux.after_step(model, "critic")
            logs.append({"value_loss": lv, **alog})
    return _mean_logs(logs)


def _value_phase_loss(model, mb, cfg: TrainConfig, algorithm: str, value_into_rep: bool, fwd=None):
    if algorithm == "dcpg":
        lf, gf, _ = ppo_value_loss(model, mb, "returns", value_into_rep, fwd=fwd)
        ld, gd, _ = ppo_value_loss(model, mb, "delayed", value_into_rep, fwd=fwd)
        loss = cfg.dcpg_value_coef * lf + cfg.dcpg_delayed_coef * ld
        return loss, combine(gf, gd, scales=[cfg.dcpg_value_coef, cfg.dcpg_delayed_coef])
    lv, gv, _ = ppo_value_loss(model, mb, "returns", value_into_rep, fwd=fwd)
    return cfg.vf_coef * lv, combine(gv, scales=[cfg.vf_coef])


def _policy_phase(model, data, cfg: TrainConfig, opt, aux: AuxSuite, rng, algorithm: str) -> dict:
    n = data["actions"].shape[0]
    logs = []
    for _ in range(cfg.policy_epochs):
        for idx in _splits(n, cfg.minibatches, rng):
            mb = _take(data, idx)
            if model.coupled:
                f = model.forward(mb["obs"])
                lp, gp, info = ppo_policy_loss(model, mb, cfg.clip, cfg.ent_coef, cfg.norm_adv, fwd=f)
                # the shared representation only learns from the critic in the auxiliary phase
                lv, gv = _value_phase_loss(model, mb, cfg, algorithm, value_into_rep=False, fwd=f)
                ga, alog = aux.losses(model, mb, None, info["adv_norm"])
                opt.step(model, combine(gp, gv, ga))
                aux.after_step(model, None)
            else:
                lp, gp, info = ppo_policy_loss(model, mb, cfg.clip, cfg.ent_coef, cfg.norm_adv)
                ga, alog = aux.losses(model, mb, "actor", info["adv_norm"])
                opt.step(model, combine(gp, ga), "actor")
                aux.after_step(model, "actor")
                lv, gv = _value_phase_loss(model, mb, cfg, algorithm, value_into_rep=True)
                gc, clog = aux.losses(model, mb, "critic", info["adv_norm"])
                opt.step(model, combine(gv, gc), "critic")
                aux.after_step(model, "critic")
                alog.update(clog)
            logs.append({"policy_loss": info["policy_loss"], "value_loss": lv,
                         "entropy": info["entropy"], **alog})
    return _mean_logs(logs)


def _aux_phase(model, store: list[dict], cfg: TrainConfig, opt, rng) -> dict:
    data = {"obs": np.concatenate([d["obs"] for d in store]),
            "returns": np.concatenate([d["returns"] for d in store])}
    n = data["obs"].shape[0]
    data["old_logits"] = np.concatenate([model.policy_logits(chunk)
                                         for chunk in np.array_split(data["obs"], max(1, n // 4096))])
    parts = max(1, n // cfg.aux_minibatch_size)
    logs = []
    for _ in range(cfg.aux_epochs):
        for idx in _splits(n, parts, rng):
            mb = _take(data, idx)
            if model.coupled:
                loss, grads, info = ppg_aux_loss(model, mb, cfg.beta_clone, cfg.aux_vf_coef)
                opt.step(model, grads)
            else:
                loss, (gc, ga), info = ppg_aux_loss(model, mb, cfg.beta_clone, cfg.aux_vf_coef, split=True)
                opt.step(model, ga, "actor")
                opt.step(model, gc, "critic")
            logs.append({"joint_loss": loss, **info})
    return _mean_logs(logs)
