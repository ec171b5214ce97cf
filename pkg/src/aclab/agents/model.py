from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..nn import Mlp, ParamSet, add_grads, load_params, save_params


@dataclass
class Forward:
    """Activations of one batched forward pass, kept for the backward pass."""

    obs: np.ndarray
    za: np.ndarray | None = None
    zc: np.ndarray | None = None
    tape_a: list | None = None
    tape_c: list | None = None
    logits: np.ndarray | None = None
    value: np.ndarray | None = None
    vaux: np.ndarray | None = None
    head_tapes: dict = field(default_factory=dict)


class ActorCriticModel:
    """Coupled (one shared representation) or decoupled (phi_a, phi_c) actor-critic MLP.

    ``params`` holds every tensor; ``actor_keys`` / ``critic_keys`` partition it into the
    optimiser groups. In the coupled variant the representation belongs to both groups'
    loss but is optimised once, so coupled models use a single group (``all_keys``).
    """

    def __init__(self, obs_dim: int, n_actions: int, coupled: bool = True, hidden: int = 64,
                 latent: int = 32, aux_value_head: bool = False, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.obs_dim, self.n_actions = obs_dim, n_actions
        self.coupled = coupled
        self.hidden, self.latent = hidden, latent
        sizes = (obs_dim, hidden, hidden, latent)
        acts = ("tanh", "tanh", "tanh")
        if coupled:
            self.phi_a = self.phi_c = Mlp("phi", sizes, acts)
        else:
            self.phi_a = Mlp("phi_a", sizes, acts)
            self.phi_c = Mlp("phi_c", sizes, acts)
        self.pi = Mlp("pi", (latent, n_actions), ("linear",))
        self.v = Mlp("v", (latent, 1), ("linear",))
        # in the coupled variant the auxiliary value head is the value head itself
        self.vaux = Mlp("vaux", (latent, 1), ("linear",)) if aux_value_head and not coupled else None
        self.params: ParamSet = {}
        self.params.update(self.phi_a.init(rng))
        if not coupled:
            self.params.update(self.phi_c.init(rng))
        self.params.update(self.pi.init(rng, out_gain=0.01))
        self.params.update(self.v.init(rng, out_gain=1.0))
        if self.vaux is not None:
            self.params.update(self.vaux.init(rng, out_gain=1.0))
        self.heads: dict[str, tuple[Mlp, str]] = {}

    @property
    def variant(self) -> str:
        return "coupled" if self.coupled else "decoupled"

    # --- parameter groups -----------------------------------------------------

    def rep_keys(self, which: str) -> list[str]:
        return (self.phi_a if which == "actor" else self.phi_c).keys()

    @property
    def actor_keys(self) -> list[str]:
        keys = self.phi_a.keys() + self.pi.keys()
        if self.vaux is not None:
            keys += self.vaux.keys()
        keys += [k for name, (net, group) in self.heads.items() if group == "actor" for k in net.keys()]
        return keys

    @property
    def critic_keys(self) -> list[str]:
        keys = self.v.keys() if self.coupled else self.phi_c.keys() + self.v.keys()
        keys += [k for name, (net, group) in self.heads.items() if group == "critic" for k in net.keys()]
        return keys

    @property
    def all_keys(self) -> list[str]:
        return list(self.params)

    def add_head(self, net: Mlp, group: str, rng: np.random.Generator, out_gain: float = 1.0) -> None:
        if net.name in self.heads:
            return
        self.heads[net.name] = (net, group)
        self.params.update(net.init(rng, out_gain=out_gain))

    def head(self, name: str) -> Mlp:
        return self.heads[name][0]

    # --- forward / backward ---------------------------------------------------

    def represent(self, obs: np.ndarray, which: str = "actor") -> np.ndarray:
        net = self.phi_a if which in ("actor", "shared") else self.phi_c
        return net.forward(self.params, obs)[0]

    def rep_forward(self, obs, which: str):
        net = self.phi_a if which == "actor" else self.phi_c
        return net.forward(self.params, obs)

    def rep_backward(self, which: str, tape, dz) -> ParamSet:
        net = self.phi_a if which == "actor" else self.phi_c
        return net.backward(self.params, tape, dz)[0]

    def forward(self, obs: np.ndarray, policy: bool = True, value: bool = True,
                aux_value: bool = False) -> Forward:
        obs = np.asarray(obs, dtype=np.float64)
        f = Forward(obs=obs)
        p = self.params
        if policy or aux_value or self.coupled:
            f.za, f.tape_a = self.phi_a.forward(p, obs)
        if self.coupled:
            f.zc, f.tape_c = f.za, f.tape_a
        elif value:
            f.zc, f.tape_c = self.phi_c.forward(p, obs)
        if policy:
            f.logits, f.head_tapes["pi"] = self.pi.forward(p, f.za)
        if value:
            out, f.head_tapes["v"] = self.v.forward(p, f.zc)
            f.value = out[:, 0]
        if aux_value:
            head = self.v if self.vaux is None else self.vaux
            out, f.head_tapes["vaux"] = head.forward(p, f.za)
            f.vaux = out[:, 0]
        return f

    def backward(self, f: Forward, d_logits=None, d_value=None, d_vaux=None, d_za=None, d_zc=None,
                 value_into_rep: bool = True) -> ParamSet:
        """Accumulate parameter gradients from output/latent gradients.

        ``value_into_rep=False`` stops the value-head gradient at the representation.
        """
        p = self.params
        grads: ParamSet = {}
        dza = None if d_za is None else np.array(d_za, dtype=np.float64)
        dzc = None if d_zc is None else np.array(d_zc, dtype=np.float64)

        def acc(cur, extra):
            return extra if cur is None else cur + extra

        if d_logits is not None:
            g, gz = self.pi.backward(p, f.head_tapes["pi"], d_logits)
            add_grads(grads, g)
            dza = acc(dza, gz)
        if d_value is not None:
            g, gz = self.v.backward(p, f.head_tapes["v"], np.asarray(d_value)[:, None])
            add_grads(grads, g)
            if value_into_rep:
                dzc = acc(dzc, gz)
        if d_vaux is not None:
            head = self.v if self.vaux is None else self.vaux
            g, gz = head.backward(p, f.head_tapes["vaux"], np.asarray(d_vaux)[:, None])
            add_grads(grads, g)
            dza = acc(dza, gz)
        if self.coupled:
            dz = dza if dzc is None else acc(dza, dzc)
            if dz is not None:
                add_grads(grads, self.phi_a.backward(p, f.tape_a, dz)[0])
        else:
            if dza is not None:
                add_grads(grads, self.phi_a.backward(p, f.tape_a, dza)[0])
            if dzc is not None:
                add_grads(grads, self.phi_c.backward(p, f.tape_c, dzc)[0])
        return grads

    def policy_logits(self, obs) -> np.ndarray:
        return self.forward(obs, policy=True, value=False).logits

    def value(self, obs) -> np.ndarray:
        return self.forward(obs, policy=False, value=True).value

    # --- copies and persistence ---------------------------------------------

    def clone(self) -> "ActorCriticModel":
        return copy.deepcopy(self)

    def critic_snapshot(self) -> ParamSet:
        keys = self.phi_c.keys() + self.v.keys()
        return {k: self.params[k].copy() for k in keys}

    def snapshot_value(self, snapshot: ParamSet, obs) -> np.ndarray:
        z = self.phi_c.forward(snapshot, obs)[0]
        return self.v.forward(snapshot, z)[0][:, 0]

    def meta(self) -> dict:
        return {"obs_dim": self.obs_dim, "n_actions": self.n_actions, "coupled": self.coupled,
                "hidden": self.hidden, "latent": self.latent, "aux_value_head": self.vaux is not None,
                "heads": {name: {"sizes": list(net.sizes), "activations": list(net.activations),
                                 "group": group} for name, (net, group) in self.heads.items()}}

    def save(self, path, extra: dict | None = None) -> None:
        meta = self.meta()
        if extra:
            meta["extra"] = extra
        save_params(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "ActorCriticModel":
        params, meta = load_params(path)
        model = cls(meta["obs_dim"], meta["n_actions"], coupled=meta["coupled"], hidden=meta["hidden"],
                    latent=meta["latent"], aux_value_head=meta["aux_value_head"])
        for name, h in meta.get("heads", {}).items():
            model.heads[name] = (Mlp(name, tuple(h["sizes"]), tuple(h["activations"])), h["group"])
        if set(params) != set(model.params) | {k for n, (net, _) in model.heads.items() for k in net.keys()}:
            raise ValueError("checkpoint parameters do not match the stored architecture")
        model.params = params
        return model
