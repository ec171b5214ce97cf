"""Run one (config, seed) cell end to end, and fan cells out over worker processes."""
from __future__ import annotations

import dataclasses
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..agents.evaluate import assembly_expected_return, evaluate_returns
from ..agents.model import ActorCriticModel
from ..agents.train import train
from ..envs import AssemblyLine, heldout_level_set, make_env, sample_level_set, write_manifest
from ..info.analysis import MiReport, collect_analysis_batch, compute_metric_suite
from ..seeding import stream
from ..theory import generalisation_bound_check
from .config import ExperimentConfig

WORKERS_ENV = "ACLAB_WORKERS"


@dataclass
class RunRecord:
    run_id: str
    config_digest: str
    seed: int
    env: str
    algorithm: str
    coupling: str
    attachments: list
    budget: int
    n_train_levels: int
    cell: dict
    steps: int
    train_return: float
    test_return: float
    aux_batch_sizes: list
    bound: dict | None = None
    mi_report: MiReport | None = None
    wall_clock: dict = field(default_factory=dict)
    run_dir: str | None = None

    @property
    def label(self) -> str:
        parts = [self.algorithm, self.coupling]
        if self.attachments:
            parts.append("+".join(self.attachments))
        parts += [f"{k}={v}" for k, v in sorted(self.cell.items())]
        return "/".join(parts)

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("mi_report")
        return json.dumps(d, sort_keys=True, indent=1)


def load_record(run_dir) -> RunRecord:
    run_dir = Path(run_dir)
    d = json.loads((run_dir / "record.json").read_text())
    mi_path = run_dir / "reports" / "mi_report.jsonl"
    d["mi_report"] = MiReport.from_text(mi_path.read_text()) if mi_path.exists() else None
    return RunRecord(**d)


def build_levels(cfg: ExperimentConfig):
    env = make_env(cfg.env, **cfg.env_params)
    train_lv = sample_level_set(env, cfg.train_levels, cfg.level_seed)
    test_lv = heldout_level_set(env, cfg.test_levels, cfg.level_seed)
    return env, train_lv, test_lv


def final_returns(model, env, train_lv, test_lv, seed: int, episodes: int) -> tuple[float, float]:
    """Undiscounted returns on train and held-out levels; exact on the assembly line."""
    if isinstance(env, AssemblyLine):
        return (assembly_expected_return(model, env, train_lv, 1.0),
                assembly_expected_return(model, env, test_lv, 1.0))
    rng = stream(seed, "eval")
    return (evaluate_returns(model, env, train_lv, episodes, rng),
            evaluate_returns(model, env, test_lv, episodes, rng))


def measure(model: ActorCriticModel, env, levels, cfg: ExperimentConfig, seed: int) -> MiReport:
    a = cfg.analysis
    sample = collect_analysis_batch(model, env, levels, stream(seed, "analysis"), a["collection_steps"], a["n"])
    jitter_seed = int(stream(seed, "jitter").integers(2 ** 31))
    return compute_metric_suite(sample, model, k=a["k"], seed=jitter_seed)


def run_cell(cfg: ExperimentConfig, seed: int, out_dir=None, cell: dict | None = None) -> RunRecord:
    t0 = time.time()
    env, train_lv, test_lv = build_levels(cfg)
    cell = cell or {}
    run_id = "_".join([cfg.name] + [f"{k}-{v}" for k, v in sorted(cell.items())] + [f"seed{seed}"])
    run_dir = None
    log = None
    if out_dir is not None:
        run_dir = Path(out_dir) / run_id
        for sub in ("checkpoints", "logs", "reports"):
            (run_dir / sub).mkdir(parents=True, exist_ok=True)
        cfg.save(run_dir / "config.cfg")
        write_manifest(run_dir / "levels_train.json", train_lv, cfg.env, env.params())
        write_manifest(run_dir / "levels_test.json", test_lv, cfg.env, env.params())
        log_path = run_dir / "logs" / "metrics.jsonl"
        log_path.write_text("")

        def log(rec, _p=log_path):
            with _p.open("a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    result = train(cfg.algorithm, cfg.coupling, cfg.train, env, train_lv, cfg.budget, seed,
                   attachments=cfg.attachments, test_levels=test_lv, logger=log,
                   checkpoint_dir=None if run_dir is None else run_dir / "checkpoints")
    t_train = time.time() - t0
    model = result.model
    tr, te = final_returns(model, env, train_lv, test_lv, seed, cfg.analysis["eval_episodes"])
    report = bound = None
    if cfg.analysis.get("enabled", True):
        report = measure(model, env, train_lv, cfg, seed)
        rep = "shared" if model.coupled else "actor"
        mi = report.value(rep, "I(Z;L)")
        bound = generalisation_bound_check(model, env, train_lv, test_lv, mi,
                                           episodes=cfg.analysis["eval_episodes"],
                                           rng=stream(seed, "eval")).as_dict()
    record = RunRecord(run_id=run_id, config_digest=cfg.digest, seed=seed, env=cfg.env,
                       algorithm=cfg.algorithm, coupling=cfg.coupling,
                       attachments=[a.tag for a in cfg.attachments], budget=cfg.budget,
                       n_train_levels=cfg.train_levels, cell=cell, steps=result.steps,
                       train_return=tr, test_return=te, aux_batch_sizes=result.aux_batch_sizes,
                       bound=bound, mi_report=report,
                       wall_clock={"train_s": round(t_train, 3), "total_s": round(time.time() - t0, 3)},
                       run_dir=None if run_dir is None else str(run_dir))
    if run_dir is not None:
        if report is not None:
            (run_dir / "reports" / "mi_report.jsonl").write_text(report.to_text())
        if bound is not None:
            (run_dir / "reports" / "bound.json").write_text(json.dumps(bound, sort_keys=True, indent=1))
        (run_dir / "record.json").write_text(record.to_json())
    return record


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def _cell_job(args):
    cfg, seed, out_dir, cell = args
    return run_cell(cfg, seed, out_dir, cell)


def run_cells(jobs: list, workers: int | None = None) -> list[RunRecord]:
    """Execute (config, seed, out_dir, cell) jobs; results come back in job order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [_cell_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_cell_job, jobs))


def run_experiment(cfg: ExperimentConfig, out_dir=None, seeds=None, workers=None) -> list[RunRecord]:
    seeds = cfg.seeds if seeds is None else seeds
    return run_cells([(cfg, s, out_dir, None) for s in seeds], workers)


def sweep_cells(cfg: ExperimentConfig, axis: str | None = None, values=None) -> list[tuple[ExperimentConfig, dict]]:
    axis = axis or cfg.sweep_axis
    values = cfg.sweep_values if values is None else values
    if axis is None or not values:
        raise ValueError("sweep needs an axis and at least one value")
    cells = []
    for v in values:
        if axis == "model_width":
            sub = cfg.replace(train=_replace_train(cfg, width_mult=float(v)))
        elif axis == "aux_batch_levels":
            if cfg.algorithm not in ("ppg", "dcpg"):
                raise ValueError("the auxiliary batch axis needs a phasic algorithm (ppg or dcpg)")
            sub = cfg.replace(train=_replace_train(cfg, n_pi=int(v)))
        elif axis == "coupling":
            sub = cfg.replace(coupling=str(v))
        else:
            raise ValueError(f"unknown sweep axis {axis!r}")
        cells.append((sub, {axis: v}))
    return cells


def _replace_train(cfg, **changes):
    return dataclasses.replace(cfg.train, **changes)


def sweep(cfg: ExperimentConfig, axis: str | None = None, values=None, out_dir=None, seeds=None,
          workers=None) -> list[RunRecord]:
    seeds = cfg.seeds if seeds is None else seeds
    jobs = [(sub, s, out_dir, cell) for sub, cell in sweep_cells(cfg, axis, values) for s in seeds]
    return run_cells(jobs, workers)


def collect_records(root) -> list[RunRecord]:
    root = Path(root)
    return [load_record(p.parent) for p in sorted(root.rglob("record.json"))]

