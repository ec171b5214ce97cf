"""Dense networks with hand-written reverse-mode gradients, Adam, and categorical policies.

Parameters live in plain ``dict[str, np.ndarray]`` (a *ParamSet*). Layers compute
``x @ W + b`` with ``W`` stored as ``(in, out)``; everything is float64.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ParamSet = dict[str, np.ndarray]

CHECKPOINT_VERSION = 1


def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


@dataclass(frozen=True)
class Mlp:
    """Stack of dense layers; ``activations[i]`` is ``"tanh"`` or ``"linear"``."""

    name: str
    sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError("need one activation per layer")
        for act in self.activations:
            if act not in ("tanh", "linear"):
                raise ValueError(f"unknown activation {act!r}")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def keys(self) -> list[str]:
        out = []
        for i in range(self.n_layers):
            out += [f"{self.name}.{i}.w", f"{self.name}.{i}.b"]
        return out

    def init(self, rng: np.random.Generator, hidden_gain: float = np.sqrt(2.0),
             out_gain: float = 1.0) -> ParamSet:
        params = {}
        for i in range(self.n_layers):
            gain = out_gain if i == self.n_layers - 1 else hidden_gain
            params[f"{self.name}.{i}.w"] = orthogonal(rng, (self.sizes[i], self.sizes[i + 1]), gain)
            params[f"{self.name}.{i}.b"] = np.zeros(self.sizes[i + 1])
        return params

    def forward(self, params: ParamSet, x: np.ndarray) -> tuple[np.ndarray, list]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"{self.name}: expected input width {self.sizes[0]}, got {x.shape[-1]}")
        tape = []
        h = x
        for i, act in enumerate(self.activations):
            w = params[f"{self.name}.{i}.w"]
            out = h @ w + params[f"{self.name}.{i}.b"]
            if act == "tanh":
                out = np.tanh(out)
            tape.append((h, out))
            h = out
        return h, tape

    def backward(self, params: ParamSet, tape: list, grad_out: np.ndarray
                 ) -> tuple[ParamSet, np.ndarray]:
        """Return (parameter gradients, gradient w.r.t. the input)."""
        grads = {}
        g = np.asarray(grad_out, dtype=np.float64)
        for i in reversed(range(self.n_layers)):
            h_in, h_out = tape[i]
            if self.activations[i] == "tanh":
                g = g * (1.0 - h_out * h_out)
            if h_in.ndim == 1:
                grads[f"{self.name}.{i}.w"] = np.outer(h_in, g)
                grads[f"{self.name}.{i}.b"] = g.copy()
            else:
                grads[f"{self.name}.{i}.w"] = h_in.T @ g
                grads[f"{self.name}.{i}.b"] = g.sum(axis=0)
            g = g @ params[f"{self.name}.{i}.w"].T
        return grads, g


def mlp_forward(net: Mlp, params: ParamSet, x: np.ndarray):
    return net.forward(params, x)


def backward(net: Mlp, params: ParamSet, tape: list, grad_out: np.ndarray) -> ParamSet:
    return net.backward(params, tape, grad_out)[0]


def add_grads(into: ParamSet, other: ParamSet, scale: float = 1.0) -> ParamSet:
    for k, g in other.items():
        if k in into:
            into[k] = into[k] + scale * g
        else:
            into[k] = scale * g
    return into


def global_norm(grads: ParamSet) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


# --- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    m: ParamSet
    v: ParamSet
    step: int = 0
    lr: float = 5e-4
    eps: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999

    @classmethod
    def create(cls, params: ParamSet, keys=None, **kwargs) -> "AdamState":
        keys = list(params) if keys is None else list(keys)
        return cls(m={k: np.zeros_like(params[k]) for k in keys},
                   v={k: np.zeros_like(params[k]) for k in keys}, **kwargs)

    @property
    def keys(self) -> list[str]:
        return list(self.m)


def adam_step(params: ParamSet, grads: ParamSet, state: AdamState,
              max_grad_norm: float | None = 0.5) -> tuple[ParamSet, AdamState]:
    """One clipped Adam update over the keys owned by ``state``; missing grads count as zero.

    Parameters are updated in place and also returned.
    """
    g = {k: grads[k] if k in grads else np.zeros_like(params[k]) for k in state.m}
    for k, v in g.items():
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite gradient for {k}")
    if max_grad_norm is not None:
        norm = global_norm(g)
        if norm > max_grad_norm:
            scale = max_grad_norm / (norm + 1e-12)
            g = {k: v * scale for k, v in g.items()}
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, gk in g.items():
        state.m[k] = b1 * state.m[k] + (1 - b1) * gk
        state.v[k] = b2 * state.v[k] + (1 - b2) * gk * gk
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        params[k] = params[k] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# --- categorical policy ops ---------------------------------------------------

def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits, axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def entropy(logits: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits)
    return -np.sum(np.exp(logp) * logp, axis=-1)


def entropy_grad(logits: np.ndarray) -> np.ndarray:
    """d H / d logits, with H = -sum p log p."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    h = -np.sum(p * logp, axis=-1, keepdims=True)
    return -p * (logp + h)


def kl_categorical(p_logits: np.ndarray, q_logits: np.ndarray) -> np.ndarray:
    """KL(p || q) per row."""
    logp = log_softmax(p_logits)
    return np.sum(np.exp(logp) * (logp - log_softmax(q_logits)), axis=-1)


def kl_grad_q(p_logits: np.ndarray, q_logits: np.ndarray) -> np.ndarray:
    """d KL(p || q) / d q_logits = softmax(q) - softmax(p)."""
    return softmax(q_logits) - softmax(p_logits)


def sample_categorical(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = softmax(np.atleast_2d(logits))
    cdf = np.cumsum(p, axis=-1)
    u = rng.random((p.shape[0], 1))
    idx = np.sum(cdf < u * cdf[:, -1:], axis=-1)
    return np.minimum(idx, p.shape[-1] - 1)


@dataclass
class Categorical:
    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    def log_prob(self, action) -> np.ndarray:
        logp = log_softmax(self.logits)
        action = np.asarray(action)
        if logp.ndim == 1:
            return logp[action]
        return np.take_along_axis(logp, action.reshape(-1, 1), axis=-1)[:, 0]

    def entropy(self) -> np.ndarray:
        return entropy(self.logits)

    def sample(self, rng: np.random.Generator):
        out = sample_categorical(self.logits, rng)
        return int(out[0]) if self.logits.ndim == 1 else out


# --- checkpoints --------------------------------------------------------------

def save_params(path, params: ParamSet, meta: dict | None = None) -> None:
    """Versioned ``.npz`` checkpoint: names, shapes and row-major values, plus JSON metadata."""
    header = {"version": CHECKPOINT_VERSION, "names": list(params),
              "shapes": [list(params[k].shape) for k in params], "meta": meta or {}}
    arrays = {f"p{i}": np.ascontiguousarray(params[k], dtype=np.float64)
              for i, k in enumerate(params)}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_params(path) -> tuple[ParamSet, dict]:
    with np.load(Path(path)) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        params = {}
        for i, (name, shape) in enumerate(zip(header["names"], header["shapes"])):
            arr = data[f"p{i}"]
            if list(arr.shape) != shape:
                raise ValueError(f"shape mismatch for {name}")
            params[name] = arr.copy()
    return params, header["meta"]


# --- finite differences (shared by the test-suite and the verify command) ------

def finite_difference_check(loss_fn, params: ParamSet, grads: ParamSet, h: float = 1e-4,
                            max_entries: int = 40, rng: np.random.Generator | None = None
                            ) -> float:
    """Max relative error between ``grads`` and central differences of ``loss_fn(params)``.

    ``loss_fn`` must not mutate ``params``; a random subset of entries per tensor is probed.
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for k, g in grads.items():
        # the probe writes through a flat view, so the tensor must be contiguous
        params[k] = np.ascontiguousarray(params[k])
        flat = params[k].reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + h
            lp = loss_fn(params)
            flat[j] = orig - h
            lm = loss_fn(params)
            flat[j] = orig
            num = (lp - lm) / (2 * h)
            ana = g.reshape(-1)[j]
            err = abs(num - ana) / max(abs(num), abs(ana), 1e-4)
            worst = max(worst, err)
    return worst


__all__ = [
    "ParamSet", "Mlp", "mlp_forward", "backward", "AdamState", "adam_step", "Categorical",
    "log_softmax", "softmax", "entropy", "entropy_grad", "kl_categorical", "kl_grad_q",
    "sample_categorical", "save_params", "load_params", "finite_difference_check",
    "add_grads", "global_norm", "orthogonal",
]
