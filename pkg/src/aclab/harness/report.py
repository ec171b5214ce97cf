"""Score tables and plot-ready CSV from finished runs."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..info.analysis import METRICS
from .stats import mean_ci, welch_t_test

BASELINE = ("ppo", "coupled")


class IncompatibleRecords(ValueError):
    pass


@dataclass
class ScoreRow:
    label: str
    n_seeds: int
    train_mean: float
    test_mean: float
    train_norm: float | None
    test_norm: float | None
    welch_t: float | None
    significant: bool | None


@dataclass
class ScoreTable:
    rows: list
    baseline_label: str | None

    def to_text(self) -> str:
        head = ["config", "seeds", "train", "test", "train/base", "test/base", "welch_t", "sig"]
        body = [[r.label, str(r.n_seeds), f"{r.train_mean:.4f}", f"{r.test_mean:.4f}", _opt(r.train_norm),
                 _opt(r.test_norm), _opt(r.welch_t), "-" if r.significant is None else ("*" if r.significant else "")]
                for r in self.rows]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
        lines += [fmt.format(*row) for row in body]
        if self.baseline_label is None:
            lines.append("(no ppo/coupled baseline present: scores not normalised)")
        return "\n".join(lines) + "\n"


def _opt(x) -> str:
    return "-" if x is None else f"{x:.4f}"


def _group(records) -> dict:
    groups: dict = {}
    for r in records:
        groups.setdefault(r.label, []).append(r)
    return groups


def _check_compatible(records) -> None:
    keys = {(r.env, r.budget, r.n_train_levels) for r in records}
    if len(keys) > 1:
        raise IncompatibleRecords(f"records mix incompatible settings (env, budget, levels): {sorted(keys)}")


def _baseline_for(rec, groups) -> str | None:
    """PPO with a shared representation, no attachments, same sweep cell when one exists."""
    cands = [label for label, rs in groups.items()
             if (rs[0].algorithm, rs[0].coupling) == BASELINE and not rs[0].attachments]

    def key(cell):
        # a coupling sweep compares against its own coupled cell
        return {k: v for k, v in cell.items() if k != "coupling"}

    same_cell = [lab for lab in cands if key(groups[lab][0].cell) == key(rec.cell)]
    return same_cell[0] if same_cell else None


def score_table(records) -> ScoreTable:
    records = list(records)
    if not records:
        raise ValueError("no run records")
    _check_compatible(records)
    groups = _group(records)
    rows = []
    base_used = None
    for label in sorted(groups):
        rs = groups[label]
        tr = np.array([r.train_return for r in rs])
        te = np.array([r.test_return for r in rs])
        base = _baseline_for(rs[0], groups)
        tn = te_n = t = sig = None
        if base is not None:
            base_used = base_used or base
            btr = np.array([r.train_return for r in groups[base]])
            bte = np.array([r.test_return for r in groups[base]])
            tn = _ratio(tr.mean(), btr.mean())
            te_n = _ratio(te.mean(), bte.mean())
            if base != label and te.size >= 2 and bte.size >= 2:
                w = welch_t_test(te, bte)
                t, sig = w.t, w.significant
        rows.append(ScoreRow(label, len(rs), float(tr.mean()), float(te.mean()), tn, te_n, t, sig))
    return ScoreTable(rows, base_used)


def _ratio(a: float, b: float) -> float | None:
    return None if b == 0 else float(a / b)


def mi_rows(records) -> list[dict]:
    """metric, representation, config label, mean and 95% half-width over seeds."""
    out = []
    for label, rs in sorted(_group(records).items()):
        reports = [r.mi_report for r in rs if r.mi_report is not None]
        if not reports:
            continue
        reps = list(reports[0].representations) + ["obs"]
        for rep in reps:
            for metric in METRICS:
                vals = [rp.value(rep, metric) for rp in reports]
                mean, ci = mean_ci(vals)
                out.append({"config": label, "representation": rep, "metric": metric, "mean": mean,
                            "ci95": "" if ci is None else ci, "n_seeds": len(vals),
                            "ci_defined": ci is not None, **{f"cell_{k}": v for k, v in rs[0].cell.items()}})
    return out


def aux_batch_curves(records) -> list[dict]:
    """I(Z_A;L) and I(Z_A;V) against policy phases per auxiliary phase."""
    out = []
    by_level: dict = {}
    for r in records:
        if "aux_batch_levels" in r.cell and r.mi_report is not None:
            by_level.setdefault(int(r.cell["aux_batch_levels"]), []).append(r)
    for level in sorted(by_level):
        rs = by_level[level]
        rep = "shared" if rs[0].coupling == "coupled" else "actor"
        sizes = sorted({s for r in rs for s in r.aux_batch_sizes})
        for metric in ("I(Z;L)", "I(Z;V)"):
            mean, ci = mean_ci([r.mi_report.value(rep, metric) for r in rs])
            out.append({"aux_batch_level": level, "aux_batch_size": sizes[0] if sizes else "",
                        "representation": rep, "metric": metric, "mean": mean, "ci95": "" if ci is None else ci,
                        "n_seeds": len(rs)})
    return out


def _write_csv(path: Path, rows: list[dict]) -> None:
    fields: list = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: _csv_val(v) for k, v in r.items()})


def _csv_val(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def emit_report(records, out_dir) -> dict:
    records = list(records)
    if not records:
        raise ValueError("no run records")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = score_table(records)
    paths = {"scores_txt": out / "scores.txt", "scores_csv": out / "scores.csv", "mi_csv": out / "mi.csv"}
    paths["scores_txt"].write_text(table.to_text())
    _write_csv(paths["scores_csv"], [
        {"config": r.label, "n_seeds": r.n_seeds, "train_mean": r.train_mean, "test_mean": r.test_mean,
         "train_norm": "" if r.train_norm is None else r.train_norm,
         "test_norm": "" if r.test_norm is None else r.test_norm,
         "welch_t": "" if r.welch_t is None else r.welch_t,
         "significant": "" if r.significant is None else r.significant} for r in table.rows])
    _write_csv(paths["mi_csv"], mi_rows(records))
    curves = aux_batch_curves(records)
    if curves:
        paths["aux_curves_csv"] = out / "aux_batch_curves.csv"
        _write_csv(paths["aux_curves_csv"], curves)
    return paths
