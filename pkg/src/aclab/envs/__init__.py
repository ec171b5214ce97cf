from .assembly import ACCEPT, REJECT, AssemblyLine, assembly_optimal_policy, assembly_optimal_value, enumerate_states
from .base import (
    HELDOUT_SEED_OFFSET,
    CmdpSpec,
    EnvState,
    LevelContext,
    Transition,
    UnsupportedEnvironment,
    heldout_level_set,
    read_manifest,
    replay_manifest,
    sample_level_set,
    write_manifest,
)
from .gridworld import GridWorld

ENVIRONMENTS = {"assembly": AssemblyLine, "gridworld": GridWorld}


def make_env(kind: str, **params):
    try:
        cls = ENVIRONMENTS[kind]
    except KeyError:
        raise ValueError(f"unknown environment {kind!r}") from None
    return cls(**params)


__all__ = [
    "ACCEPT", "REJECT", "AssemblyLine", "GridWorld", "CmdpSpec", "EnvState", "LevelContext",
    "Transition", "UnsupportedEnvironment", "HELDOUT_SEED_OFFSET", "sample_level_set",
    "heldout_level_set", "write_manifest", "read_manifest", "replay_manifest", "make_env",
    "enumerate_states", "assembly_optimal_policy", "assembly_optimal_value", "ENVIRONMENTS",
]
