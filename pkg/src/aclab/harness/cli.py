"""``aclab`` command line: train, measure, verify, sweep, report."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..agents.model import ActorCriticModel
from .config import SWEEP_AXES, ConfigSchemaError, load_config, parse_axis_values, parse_seeds
from .report import emit_report
from .runner import build_levels, collect_records, measure, run_experiment, sweep


def _load(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"config not found: {path}")
    return load_config(path)


def cmd_train(args) -> int:
    cfg = _load(args.config)
    if args.budget is not None:
        cfg = cfg.replace(budget=args.budget)
    seeds = parse_seeds(args.seeds) if args.seeds else None
    for rec in run_experiment(cfg, args.out, seeds):
        print(f"{rec.run_id}: train {rec.train_return:.4f} test {rec.test_return:.4f} -> {rec.run_dir}")
    return 0


def cmd_measure(args) -> int:
    cfg = _load(args.config)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        print(f"error: checkpoint not found: {ckpt}", file=sys.stderr)
        return 2
    model = ActorCriticModel.load(ckpt)
    env, train_lv, _ = build_levels(cfg)
    report = measure(model, env, train_lv, cfg, args.seed)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_verify(args) -> int:
    if args.env != "assembly":
        print(f"error: exact checks need an enumerable environment, not {args.env!r}", file=sys.stderr)
        return 2
    from ..theory import verify_assembly
    results = verify_assembly(args.seed)
    for r in results:
        print(json.dumps({"check": r.name, "pass": r.passed, "values": r.values, "tolerance": r.tolerance},
                         default=float))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=sys.stderr)
    return 1 if failed else 0


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    axis = args.axis or cfg.sweep_axis
    if axis is None:
        print("error: no sweep axis in config or on the command line", file=sys.stderr)
        return 2
    values = parse_axis_values(axis, args.values) if args.values else None
    seeds = parse_seeds(args.seeds) if args.seeds else None
    records = sweep(cfg, axis, values, args.out, seeds)
    for rec in records:
        print(f"{rec.run_id}: train {rec.train_return:.4f} test {rec.test_return:.4f}")
    if args.out:
        paths = emit_report(records, Path(args.out) / "report")
        print(f"report written to {paths['scores_txt'].parent}")
    return 0


def cmd_report(args) -> int:
    records = collect_records(args.runs)
    if not records:
        print(f"error: no run records under {args.runs}", file=sys.stderr)
        return 2
    paths = emit_report(records, args.out or Path(args.runs) / "report")
    sys.stdout.write(paths["scores_txt"].read_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aclab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one config over its seeds")
    t.add_argument("--config", required=True)
    t.add_argument("--seeds", help="e.g. 0..4 or 0,2,5 (overrides the config)")
    t.add_argument("--budget", type=int)
    t.add_argument("--out", default="runs")
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("measure", help="MI report for a checkpoint")
    m.add_argument("--config", required=True)
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(func=cmd_measure)

    v = sub.add_parser("verify", help="exact-enumeration checks")
    v.add_argument("--env", default="assembly")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="grid over one axis")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", choices=SWEEP_AXES)
    s.add_argument("--values")
    s.add_argument("--seeds")
    s.add_argument("--out", default="runs")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="score table and CSV from run directories")
    r.add_argument("--runs", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigSchemaError as exc:
        print("invalid config:", file=sys.stderr)
        for line in exc.problems:
            print(f"  {line}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
