"""Independent per-component RNG streams split from one master seed."""
from __future__ import annotations

import numpy as np

COMPONENTS = ("init", "env", "policy", "update", "aux", "eval", "analysis", "jitter")


def stream(seed: int, component: str) -> np.random.Generator:
    # the spawn key is the component's fixed index, so consuming one stream never shifts another
    key = COMPONENTS.index(component)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(key,))))


def streams(seed: int) -> dict[str, np.random.Generator]:
    return {name: stream(seed, name) for name in COMPONENTS}
