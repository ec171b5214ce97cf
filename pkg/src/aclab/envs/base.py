from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

# test levels come from the training seed shifted by this constant
HELDOUT_SEED_OFFSET = 7_919_000_003

MANIFEST_VERSION = 1


class UnsupportedEnvironment(Exception):
    pass


@dataclass(frozen=True)
class CmdpSpec:
    obs_dim: int
    n_actions: int
    gamma: float
    max_episode_len: int

    def __post_init__(self):
        if self.obs_dim < 1 or self.n_actions < 2 or not (0 < self.gamma <= 1) or self.max_episode_len < 1:
            raise ValueError(f"invalid CmdpSpec {self}")


@dataclass(frozen=True, eq=False)
class LevelContext:
    context_id: int
    seed: int
    kind: str
    payload: dict = field(repr=False)

    def digest(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.payload):
            val = self.payload[key]
            h.update(key.encode())
            if isinstance(val, np.ndarray):
                h.update(str(val.dtype).encode())
                h.update(str(val.shape).encode())
                h.update(np.ascontiguousarray(val).tobytes())
            else:
                h.update(repr(val).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class EnvState:
    level: LevelContext
    step_index: int
    internal: Any
    done: bool = False


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool
    context_id: int
    t: int


def level_seeds(seed: int, count: int) -> list[int]:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    seeds: list[int] = []
    seen = set()
    while len(seeds) < count:
        s = int(rng.integers(0, 2**63 - 1))
        if s not in seen:
            seen.add(s)
            seeds.append(s)
    return seeds


def sample_level_set(env, count: int, seed: int) -> list[LevelContext]:
    """``count`` levels for ``env``; deterministic in ``seed``. Context ids are 0..count-1."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return [env.make_level(i, s) for i, s in enumerate(level_seeds(seed, count))]


def heldout_level_set(env, count: int, seed: int) -> list[LevelContext]:
    return sample_level_set(env, count, seed + HELDOUT_SEED_OFFSET)


def write_manifest(path, levels: list[LevelContext], env_kind: str, env_params: dict | None = None) -> None:
    records = [{"context_id": lv.context_id, "seed": lv.seed, "digest": lv.digest()} for lv in levels]
    doc = {"version": MANIFEST_VERSION, "env": env_kind, "env_params": env_params or {}, "levels": records}
    Path(path).write_text(json.dumps(doc, indent=1))


def read_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {doc.get('version')}")
    return doc


def replay_manifest(path, env) -> list[LevelContext]:
    """Rebuild levels from a manifest and check every payload digest."""
    doc = read_manifest(path)
    levels = []
    for rec in doc["levels"]:
        lv = env.make_level(rec["context_id"], rec["seed"])
        if lv.digest() != rec["digest"]:
            raise ValueError(f"digest mismatch for context {rec['context_id']}")
        levels.append(lv)
    return levels
