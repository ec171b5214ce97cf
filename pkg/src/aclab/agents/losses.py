"""Clipped policy objective, value regression and the phasic auxiliary loss, with gradients."""
from __future__ import annotations

import numpy as np

from ..nn import add_grads, entropy, entropy_grad, kl_categorical, kl_grad_q, log_softmax, softmax


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clipped_surrogate(ratio, adv, clip):
    """Per-sample min(r A, clip(r) A) and its derivative w.r.t. the ratio."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    obj = np.minimum(unclipped, clipped)
    d_ratio = np.where(unclipped <= clipped, adv, 0.0)
    return obj, d_ratio


def ppo_policy_loss(model, mb: dict, clip: float = 0.2, ent_coef: float = 0.01,
                    normalize: bool = True, fwd=None):
    """Negated clipped objective with entropy bonus. Returns (loss, grads, info)."""
    f = fwd if fwd is not None else model.forward(mb["obs"], policy=True, value=False)
    actions = mb["actions"]
    n = actions.shape[0]
    adv = normalize_advantages(mb["adv"]) if normalize else np.asarray(mb["adv"], dtype=np.float64)
    logp_all = log_softmax(f.logits)
    logp = logp_all[np.arange(n), actions]
    ratio = np.exp(logp - mb["logp_old"])
    obj, d_ratio = clipped_surrogate(ratio, adv, clip)
    ent = entropy(f.logits)
    loss = -float(np.mean(obj + ent_coef * ent))
    onehot = np.zeros_like(f.logits)
    onehot[np.arange(n), actions] = 1.0
    d_logp = d_ratio * ratio
    d_logits = -(d_logp[:, None] * (onehot - softmax(f.logits)) + ent_coef * entropy_grad(f.logits)) / n
    grads = model.backward(f, d_logits=d_logits)
    info = {"policy_loss": -float(np.mean(obj)), "entropy": float(np.mean(ent)),
            "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip)), "adv_norm": adv}
    return loss, grads, info


def ppo_value_loss(model, mb: dict, targets_key: str = "returns", value_into_rep: bool = True, fwd=None):
    """(1/|B|) sum (V(o) - target)^2, no value clipping."""
    f = fwd if fwd is not None else model.forward(mb["obs"], policy=False, value=True)
    diff = f.value - mb[targets_key]
    loss = float(np.mean(diff ** 2))
    grads = model.backward(f, d_value=2.0 * diff / diff.size, value_into_rep=value_into_rep)
    return loss, grads, {"value_loss": loss}


def ppg_aux_loss(model, mb: dict, beta_clone: float = 1.0, value_coef: float = 1.0,
                 split: bool = False):
    """Joint auxiliary-phase loss l_V + l_aux with l_aux = MSE(v_aux) + beta_c KL(pi_old || pi).

    ``mb["old_logits"]`` must hold the policy logits recorded before the phase. With
    ``split=True`` gradients are returned separately as (critic part, actor part), which
    decoupled models step with their two optimisers.
    """
    if "old_logits" not in mb or mb["old_logits"] is None:
        raise ValueError("auxiliary minibatch lacks stored behaviour logits")
    f = model.forward(mb["obs"], policy=True, value=True, aux_value=True)
    n = f.value.size
    target = mb["returns"]
    v_diff = f.value - target
    a_diff = f.vaux - target
    l_v = float(np.mean(v_diff ** 2))
    l_dist = float(np.mean(a_diff ** 2))
    kl = kl_categorical(mb["old_logits"], f.logits)
    l_kl = float(np.mean(kl))
    loss = value_coef * l_v + l_dist + beta_clone * l_kl
    d_logits = beta_clone * kl_grad_q(mb["old_logits"], f.logits) / n
    info = {"aux_value_loss": l_v, "distill_loss": l_dist, "kl": l_kl}
    if split:
        g_critic = model.backward(f, d_value=value_coef * 2.0 * v_diff / n)
        g_actor = model.backward(f, d_vaux=2.0 * a_diff / n, d_logits=d_logits)
        return loss, (g_critic, g_actor), info
    grads = model.backward(f, d_value=value_coef * 2.0 * v_diff / n, d_vaux=2.0 * a_diff / n,
                           d_logits=d_logits)
    return loss, grads, info


def combine(*grad_sets, scales=None) -> dict:
    out: dict = {}
    scales = scales or [1.0] * len(grad_sets)
    for g, s in zip(grad_sets, scales):
        add_grads(out, g, s)
    return out
