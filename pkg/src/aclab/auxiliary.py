"""Auxiliary representation objectives attachable to the actor or critic representation.

Each loss returns ``(loss, grads)`` with gradients for the attached representation and
the objective's own head; nothing else receives gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Mlp, ParamSet, add_grads, kl_categorical, kl_grad_q

OBJECTIVES = ("mico", "dynamics", "advantage", "augmentation")
TARGETS = ("actor", "critic")

DEFAULTS = {
    "mico": {"coef": 0.5, "tau": 0.005, "beta_theta": 0.1},
    "dynamics": {"coef": 1.0, "w_in": 1.0, "w_ood_state": 1.0, "w_ood_action": 0.5, "hidden": 64},
    "advantage": {"coef": 0.25},
    "augmentation": {"coef": 0.1, "sigma": 0.1, "drop": 0.25},
}


@dataclass
class AuxAttachment:
    objective: str
    target: str
    coef: float | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.target not in TARGETS:
            raise ValueError(f"unknown attachment target {self.target!r}")
        merged = dict(DEFAULTS[self.objective])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameters for {self.objective}: {sorted(unknown)}")
        merged.update(self.params)
        if self.coef is not None:
            merged["coef"] = self.coef
        self.coef = float(merged.pop("coef"))
        if self.coef < 0:
            raise ValueError("coefficient must be non-negative")
        self.params = merged

    @property
    def tag(self) -> str:
        return f"{self.objective}({self.target[0].upper()})"


@dataclass
class TargetNetwork:
    params: ParamSet
    tau: float = 0.005

    @classmethod
    def of(cls, model, which: str, tau: float) -> "TargetNetwork":
        return cls({k: model.params[k].copy() for k in model.rep_keys(which)}, tau)

    def update(self, online: ParamSet) -> None:
        for k in self.params:
            self.params[k] = (1.0 - self.tau) * self.params[k] + self.tau * online[k]


# --- MICo ----------------------------------------------------------------------

def _angle(u, v):
    """Angular distance between rows of u and v and its partial derivatives."""
    nu = np.maximum(np.linalg.norm(u, axis=-1), 1e-12)
    nv = np.maximum(np.linalg.norm(v, axis=-1), 1e-12)
    dot = np.sum(u * v, axis=-1)
    c = dot / (nu * nv)
    one_minus = 1.0 - c * c
    active = one_minus > 1e-9
    theta = np.arctan2(np.sqrt(np.maximum(one_minus, 0.0)), c)
    # the floor only guards the derivative near parallel vectors
    s = np.sqrt(np.where(active, one_minus, 1e-9))
    ds_dc = np.where(active, -c / s, 0.0)
    dtheta_dc = (c * ds_dc - s) / (s * s + c * c)
    dc_du = v / (nu * nv)[:, None] - (c / nu ** 2)[:, None] * u
    dc_dv = u / (nu * nv)[:, None] - (c / nv ** 2)[:, None] * v
    return theta, dtheta_dc[:, None] * dc_du, dtheta_dc[:, None] * dc_dv


def mico_distance(u, v, beta_theta: float = 0.1):
    u = np.atleast_2d(u)
    v = np.atleast_2d(v)
    theta = _angle(u, v)[0]
    return 0.5 * (np.sum(u * u, -1) + np.sum(v * v, -1)) + beta_theta * theta


def mico_loss(model, which: str, target: TargetNetwork, mb: dict, gamma: float,
              rng: np.random.Generator, coef: float = 0.5, beta_theta: float = 0.1, partner=None):
    obs = mb["obs"]
    n = obs.shape[0]
    j = rng.permutation(n) if partner is None else np.asarray(partner)
    z, tape = model.rep_forward(obs, which)
    net = model.phi_a if which == "actor" else model.phi_c
    zt = net.forward(target.params, mb["next_obs"])[0]
    r = mb["rewards"]
    d_next = mico_distance(zt, zt[j], beta_theta)
    tgt = np.abs(r - r[j]) + gamma * d_next
    u, v = z, z[j]
    theta, dth_du, dth_dv = _angle(u, v)
    d = 0.5 * (np.sum(u * u, -1) + np.sum(v * v, -1)) + beta_theta * theta
    resid = d - tgt
    loss = coef * float(np.mean(resid ** 2))
    g = (2.0 * coef / n) * resid[:, None]
    du = g * (u + beta_theta * dth_du)
    dv = g * (v + beta_theta * dth_dv)
    dz = du.copy()
    np.add.at(dz, j, dv)
    return loss, model.rep_backward(which, tape, dz)


# --- dynamics discrimination ---------------------------------------------------

def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """A permutation with no fixed points (cyclic shift of a random order)."""
    if n < 2:
        raise ValueError("need at least two samples to build shuffled negatives")
    order = rng.permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[order] = np.roll(order, -1)
    return out


def resample_actions(actions, n_actions: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw among the actions different from the recorded one."""
    shift = rng.integers(1, n_actions, size=len(actions))
    return (np.asarray(actions) + shift) % n_actions


def discriminator_head(model, which: str, hidden: int = 64) -> Mlp:
    return Mlp(f"dyn_{which}", (2 * model.latent + model.n_actions, hidden, 1), ("tanh", "linear"))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def dynamics_discriminator_loss(model, which: str, mb: dict, rng: np.random.Generator, coef: float = 1.0,
                                w_in: float = 1.0, w_ood_state: float = 1.0, w_ood_action: float = 0.5,
                                hidden: int = 64, perm=None, fake_actions=None, return_parts: bool = False):
    """Weighted BCE of a (z, a, z') discriminator: real transitions 1, shuffled z' and resampled a 0."""
    obs, nxt, a = mb["obs"], mb["next_obs"], mb["actions"]
    n = obs.shape[0]
    if n < 2:
        raise ValueError("dynamics discriminator needs a minibatch of at least two transitions")
    perm = derangement(n, rng) if perm is None else np.asarray(perm)
    fake_a = resample_actions(a, model.n_actions, rng) if fake_actions is None else np.asarray(fake_actions)
    head = model.head(f"dyn_{which}")
    z, tape = model.rep_forward(obs, which)
    zn, tape_n = model.rep_forward(nxt, which)
    eye = np.eye(model.n_actions)
    x = np.concatenate([
        np.concatenate([z, eye[a], zn], axis=1),
        np.concatenate([z, eye[a], zn[perm]], axis=1),
        np.concatenate([z, eye[fake_a], zn], axis=1),
    ])
    labels = np.concatenate([np.ones(n), np.zeros(2 * n)])
    weights = np.array([w_in, w_ood_state, w_ood_action])
    wsum = weights.sum()
    if wsum <= 0:
        raise ValueError("at least one class weight must be positive")
    row_w = np.repeat(weights, n) / (n * wsum)
    logits, htape = head.forward(model.params, x)
    logits = logits[:, 0]
    bce = np.where(labels == 1.0, _softplus(-logits), _softplus(logits))
    loss = coef * float(np.sum(row_w * bce))
    d_logit = coef * row_w * (_sigmoid(logits) - labels)
    g_head, dx = head.backward(model.params, htape, d_logit[:, None])
    L = model.latent
    A = model.n_actions
    dz = dx[:n, :L] + dx[n:2 * n, :L] + dx[2 * n:, :L]
    dzn = dx[:n, L + A:] + dx[2 * n:, L + A:]
    np.add.at(dzn, perm, dx[n:2 * n, L + A:])
    grads = dict(g_head)
    add_grads(grads, model.rep_backward(which, tape, dz))
    add_grads(grads, model.rep_backward(which, tape_n, dzn))
    if return_parts:
        parts = [float(np.mean(bce[k * n:(k + 1) * n])) for k in range(3)]
        return loss, grads, parts
    return loss, grads


# --- advantage distillation ----------------------------------------------------

def advantage_head(model, which: str) -> Mlp:
    return Mlp(f"adv_{which}", (model.latent + model.n_actions, 1), ("linear",))


def advantage_distill_loss(model, which: str, mb: dict, adv_targets, coef: float = 0.25):
    head = model.head(f"adv_{which}")
    z, tape = model.rep_forward(mb["obs"], which)
    x = np.concatenate([z, np.eye(model.n_actions)[mb["actions"]]], axis=1)
    pred, htape = head.forward(model.params, x)
    diff = pred[:, 0] - adv_targets
    n = diff.size
    loss = coef * float(np.mean(diff ** 2))
    g_head, dx = head.backward(model.params, htape, (coef * 2.0 * diff / n)[:, None])
    grads = dict(g_head)
    add_grads(grads, model.rep_backward(which, tape, dx[:, :model.latent]))
    return loss, grads


# --- augmentation consistency ----------------------------------------------------

def augment(obs, rng: np.random.Generator, sigma: float = 0.1, drop: float = 0.25) -> np.ndarray:
    out = obs + sigma * rng.standard_normal(obs.shape) if sigma > 0 else obs.copy()
    if drop > 0:
        out = np.where(rng.random(obs.shape) < drop, 0.0, out)
    return out


def augmentation_consistency_loss(model, which: str, mb: dict, rng: np.random.Generator, coef: float = 0.1,
                                  sigma: float = 0.1, drop: float = 0.25, aug_obs=None, clean=None):
    """Consistency between clean and augmented inputs on the attached pathway.

    Actor: KL(pi(.|o) || pi(.|aug o)); critic: (V(o) - V(aug o))^2. The clean branch is a
    fixed target (pass ``clean`` to pin it explicitly).
    """
    obs = mb["obs"]
    aug = augment(obs, rng, sigma, drop) if aug_obs is None else aug_obs
    n = obs.shape[0]
    if which == "actor":
        ref = model.policy_logits(obs) if clean is None else clean
        f = model.forward(aug, policy=True, value=False)
        loss = coef * float(np.mean(kl_categorical(ref, f.logits)))
        grads = model.backward(f, d_logits=coef * kl_grad_q(ref, f.logits) / n)
    else:
        ref = model.value(obs) if clean is None else clean
        f = model.forward(aug, policy=False, value=True)
        diff = f.value - ref
        loss = coef * float(np.mean(diff ** 2))
        grads = model.backward(f, d_value=coef * 2.0 * diff / n)
    return loss, grads


# --- orchestration ---------------------------------------------------------------

class AuxSuite:
    """Owns the attachments of one training run: heads, target networks and the aux RNG stream."""

    def __init__(self, model, attachments, gamma: float, rng: np.random.Generator):
        self.attachments = list(attachments)
        self.gamma = gamma
        self.rng = rng
        self.targets: dict[str, TargetNetwork] = {}
        for att in self.attachments:
            which = att.target
            if att.objective == "mico":
                self.targets[which] = TargetNetwork.of(model, which, att.params["tau"])
            elif att.objective == "dynamics":
                model.add_head(discriminator_head(model, which, att.params["hidden"]), which, rng)
            elif att.objective == "advantage":
                model.add_head(advantage_head(model, which), which, rng)

    def for_group(self, group: str | None):
        return [a for a in self.attachments if group is None or a.target == group]

    def losses(self, model, mb: dict, group: str | None, adv_norm=None) -> tuple[dict, dict]:
        grads: dict = {}
        logs: dict = {}
        for att in self.for_group(group):
            which, p = att.target, att.params
            if att.objective == "mico":
                loss, g = mico_loss(model, which, self.targets[which], mb, self.gamma, self.rng,
                                    coef=att.coef, beta_theta=p["beta_theta"])
            elif att.objective == "dynamics":
                loss, g = dynamics_discriminator_loss(model, which, mb, self.rng, coef=att.coef,
                                                      w_in=p["w_in"], w_ood_state=p["w_ood_state"],
                                                      w_ood_action=p["w_ood_action"], hidden=p["hidden"])
            elif att.objective == "advantage":
                targets = adv_norm if adv_norm is not None else mb["adv"]
                loss, g = advantage_distill_loss(model, which, mb, targets, coef=att.coef)
            else:
                loss, g = augmentation_consistency_loss(model, which, mb, self.rng, coef=att.coef,
                                                        sigma=p["sigma"], drop=p["drop"])
            add_grads(grads, g)
            logs[att.tag] = loss
        return grads, logs

    def after_step(self, model, group: str | None) -> None:
        for which, tgt in self.targets.items():
            if group is None or which == group:
                tgt.update(model.params)
