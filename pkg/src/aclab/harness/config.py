"""Experiment configuration: INI text, typed, schema-checked, content-addressed."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import inspect
from dataclasses import dataclass, field
from pathlib import Path

from ..agents.train import ALGORITHMS, COUPLINGS, TrainConfig
from ..auxiliary import DEFAULTS as AUX_DEFAULTS
from ..auxiliary import AuxAttachment
from ..envs import ENVIRONMENTS

SWEEP_AXES = ("model_width", "aux_batch_levels", "coupling")


class ConfigSchemaError(ValueError):
    """Raised with every problem found, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("\n".join(problems))


def parse_seeds(text: str) -> list[int]:
    """'0..4' (inclusive) or '0,3,7'."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo_i, hi_i = int(lo), int(hi)
        if hi_i < lo_i:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo_i, hi_i + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(text: str, kind):
    if kind is bool:
        return _parse_bool(text)
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text.strip()


EXPERIMENT_KEYS = {
    "name": str, "env": str, "algorithm": str, "coupling": str, "budget": int, "seeds": str,
    "train_levels": int, "test_levels": int, "level_seed": int,
}
ANALYSIS_KEYS = {"collection_steps": int, "n": int, "k": int, "eval_episodes": int, "enabled": bool}
SWEEP_KEYS = {"axis": str, "values": str}


def _env_param_types(kind: str) -> dict:
    sig = inspect.signature(ENVIRONMENTS[kind].__init__)
    return {name: type(p.default) for name, p in sig.parameters.items() if name != "self"}


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    env: str = "assembly"
    env_params: dict = field(default_factory=dict)
    algorithm: str = "ppo"
    coupling: str = "coupled"
    budget: int = 200_000
    seeds: list = field(default_factory=lambda: [0])
    train_levels: int = 200
    test_levels: int = 200
    level_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    attachments: list = field(default_factory=list)
    analysis: dict = field(default_factory=lambda: {"collection_steps": 2 ** 16, "n": 4096, "k": 3,
                                                    "eval_episodes": 256, "enabled": True})
    sweep_axis: str | None = None
    sweep_values: list = field(default_factory=list)

    # --- text form ------------------------------------------------------------

    def to_text(self) -> str:
        """Canonical INI text: fixed section order, sorted keys, normalised values."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["experiment"] = {"name": self.name, "env": self.env, "algorithm": self.algorithm,
                            "coupling": self.coupling, "budget": str(self.budget),
                            "seeds": ",".join(str(s) for s in self.seeds),
                            "train_levels": str(self.train_levels), "test_levels": str(self.test_levels),
                            "level_seed": str(self.level_seed)}
        cp["env"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in sorted(self.env_params.items())}
        defaults = TrainConfig()
        cp["train"] = {k: _fmt(v) for k, v in sorted(self.train.as_dict().items())
                       if v != getattr(defaults, k)}
        aux = {}
        for att in self.attachments:
            aux[f"{att.objective}.{att.target}"] = _fmt(att.coef)
            for pk, pv in sorted(att.params.items()):
                if pv != AUX_DEFAULTS[att.objective].get(pk):
                    aux[f"{att.objective}.{att.target}.{pk}"] = _fmt(pv)
        cp["aux"] = dict(sorted(aux.items()))
        cp["analysis"] = {k: _fmt(v) for k, v in sorted(self.analysis.items())}
        if self.sweep_axis:
            cp["sweep"] = {"axis": self.sweep_axis, "values": ",".join(_fmt(v) for v in self.sweep_values)}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in cp[section].items()]
            lines.append("")
        return "\n".join(lines)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigSchemaError([f"syntax: {exc}"]) from None
    problems: list[str] = []
    cfg = ExperimentConfig()
    known = {"experiment", "env", "train", "aux", "analysis", "sweep"}
    for section in cp.sections():
        if section not in known:
            problems.append(f"unknown section [{section}]")

    def typed(section, schema, target: dict):
        if section not in cp:
            return
        for key, raw in cp[section].items():
            if key not in schema:
                problems.append(f"[{section}] unknown key {key!r}")
                continue
            try:
                target[key] = _convert(raw, schema[key])
            except ValueError as exc:
                problems.append(f"[{section}] {key}: {exc}")

    exp: dict = {}
    typed("experiment", EXPERIMENT_KEYS, exp)
    for key in ("name", "env", "algorithm", "coupling", "budget", "train_levels", "test_levels", "level_seed"):
        if key in exp:
            setattr(cfg, key, exp[key])
    if "seeds" in exp:
        try:
            cfg.seeds = parse_seeds(exp["seeds"])
        except ValueError as exc:
            problems.append(f"[experiment] seeds: {exc}")
    if cfg.env not in ENVIRONMENTS:
        problems.append(f"[experiment] env must be one of {sorted(ENVIRONMENTS)}, got {cfg.env!r}")
    else:
        typed("env", _env_param_types(cfg.env), cfg.env_params)
    if cfg.algorithm not in ALGORITHMS:
        problems.append(f"[experiment] algorithm must be one of {list(ALGORITHMS)}, got {cfg.algorithm!r}")
    if cfg.coupling not in COUPLINGS:
        problems.append(f"[experiment] coupling must be one of {list(COUPLINGS)}, got {cfg.coupling!r}")
    if cfg.budget < 0:
        problems.append("[experiment] budget must be non-negative")
    if cfg.train_levels < 1 or cfg.test_levels < 1:
        problems.append("[experiment] level counts must be positive")
    if not cfg.seeds:
        problems.append("[experiment] no seeds given")

    train_fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    train_types = {k: {"int": int, "float": float, "bool": bool}.get(t, str) if isinstance(t, str) else t
                   for k, t in train_fields.items()}
    tvals: dict = {}
    typed("train", train_types, tvals)
    try:
        cfg.train = TrainConfig(**tvals)
    except ValueError as exc:
        problems.append(f"[train] {exc}")

    if "aux" in cp:
        coefs: dict = {}
        params: dict = {}
        for key, raw in cp["aux"].items():
            parts = key.split(".")
            if len(parts) not in (2, 3):
                problems.append(f"[aux] key {key!r} must be objective.target or objective.target.param")
                continue
            try:
                val = float(raw)
            except ValueError:
                problems.append(f"[aux] {key}: not a number")
                continue
            if len(parts) == 2:
                coefs[(parts[0], parts[1])] = val
            else:
                params.setdefault((parts[0], parts[1]), {})[parts[2]] = val
        for pair in params:
            if pair not in coefs:
                problems.append(f"[aux] parameters given for {pair[0]}.{pair[1]} without a coefficient")
        for (obj, tgt), coef in coefs.items():
            p = params.get((obj, tgt), {})
            if obj == "dynamics" and "hidden" in p:
                p["hidden"] = int(p["hidden"])
            try:
                cfg.attachments.append(AuxAttachment(obj, tgt, coef, p))
            except ValueError as exc:
                problems.append(f"[aux] {obj}.{tgt}: {exc}")

    typed("analysis", ANALYSIS_KEYS, cfg.analysis)
    if cfg.analysis["k"] < 1 or cfg.analysis["n"] <= cfg.analysis["k"]:
        problems.append("[analysis] need 1 <= k < n")

    sw: dict = {}
    typed("sweep", SWEEP_KEYS, sw)
    if sw:
        axis = sw.get("axis")
        if axis not in SWEEP_AXES:
            problems.append(f"[sweep] axis must be one of {list(SWEEP_AXES)}, got {axis!r}")
        else:
            try:
                cfg.sweep_axis, cfg.sweep_values = axis, parse_axis_values(axis, sw.get("values", ""))
            except ValueError as exc:
                problems.append(f"[sweep] values: {exc}")
    if problems:
        raise ConfigSchemaError(problems)
    return cfg


def parse_axis_values(axis: str, text: str) -> list:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ValueError("no values")
    if axis == "model_width":
        vals = [float(s) for s in items]
        if any(v <= 0 for v in vals):
            raise ValueError("width multipliers must be positive")
        return vals
    if axis == "aux_batch_levels":
        vals = [int(s) for s in items]
        if any(v < 1 for v in vals):
            raise ValueError("policy phases per auxiliary phase must be >= 1")
        return vals
    bad = [s for s in items if s not in COUPLINGS]
    if bad:
        raise ValueError(f"unknown couplings {bad}")
    return items


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
