"""Operating tables, ROC curves and feature rankings from decision logs.

All curves pool the scores of every CV decision in a log. A decision is
positive when its score is at least the threshold.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cv_engine import DecisionLog, FoldResult, ModelReport
from .errors import DataError
from .ingest import DEFAULT_FPR_GRID, format_number
from .pcq import RATE_NOTE

POOLING_NOTE = ("Operating points threshold the pooled scores of all CV decisions; "
                "achieved FPR never exceeds the target.")
OPERATING_COLUMNS = ("target_fpr", "achieved_fpr", "tpr", "threshold")


def _scores(log: DecisionLog):
    y, _, s = log.arrays()
    pos, neg = int(np.sum(y == 1)), int(np.sum(y == 0))
    if pos == 0 or neg == 0:
        raise DataError(f"log {log.mle!r} is degenerate: needs both classes, has {pos} positive "
                        f"and {neg} negative decisions")
    return y, s, pos, neg


@dataclass(frozen=True)
class OperatingRow:
    target_fpr: float
    achieved_fpr: float
    tpr: float
    threshold: float


@dataclass(frozen=True)
class OperatingTable:
    mle: str
    rows: tuple[OperatingRow, ...]

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(OPERATING_COLUMNS)
            for r in self.rows:
                w.writerow([format_number(float(v)) for v in (r.target_fpr, r.achieved_fpr, r.tpr,
                                                              r.threshold)])


def roc_points(log: DecisionLog):
    """ROC vertices (fpr, tpr, threshold) from (0, 0) at +inf down to (1, 1)."""
    y, s, pos, neg = _scores(log)
    thresholds = np.unique(s)[::-1]
    pts = [(0.0, 0.0, float("inf"))]
    for t in thresholds:
        hit = s >= t
        pts.append((float(np.sum(hit & (y == 0))) / neg, float(np.sum(hit & (y == 1))) / pos, float(t)))
    return pts


def operating_table(log: DecisionLog, fpr_grid: Sequence[float] = DEFAULT_FPR_GRID) -> OperatingTable:
    """TPR at each target FPR over admissible pooled-score thresholds.

    A threshold ``t`` is admissible when FPR(t) stays at or below the
    target. Among admissible thresholds the one with the highest TPR is
    chosen, and among those the largest ``t``. With no admissible pooled
    score the threshold is +inf (nothing called positive).
    """
    pts = roc_points(log)
    rows = []
    for target in sorted(float(t) for t in fpr_grid):
        if not 0 <= target <= 1:
            raise DataError(f"target FPR {target} outside [0, 1]")
        # ROC vertices are ordered by decreasing threshold with non-decreasing fpr
        best = max((p for p in pts if p[0] <= target + 1e-12), key=lambda p: (p[1], p[2]))
        rows.append(OperatingRow(target, best[0], best[1], best[2]))
    return OperatingTable(log.mle, tuple(rows))


def auc_trapezoid(log: DecisionLog) -> float:
    pts = roc_points(log)
    fpr = np.array([p[0] for p in pts])
    tpr = np.array([p[1] for p in pts])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc_rank(log: DecisionLog) -> float:
    """Probability that a positive outranks a negative, ties counting half."""
    y, s, pos, neg = _scores(log)
    sp, sn = np.sort(s[y == 1]), np.sort(s[y == 0])
    below = np.searchsorted(sn, sp, side="left")
    upto = np.searchsorted(sn, sp, side="right")
    return float(np.sum(below + 0.5 * (upto - below)) / (pos * neg))


def sens_spec(log: DecisionLog):
    """(sensitivity, specificity) of the logged decisions."""
    y, pred, _ = log.arrays()
    _scores(log)
    sens = float(np.mean(pred[y == 1] == 1))
    spec = float(np.mean(pred[y == 0] == 0))
    return sens, spec


@dataclass(frozen=True)
class ImportanceEntry:
    feature: str
    importance: float | None
    frequency: float


@dataclass(frozen=True)
class ImportanceReport:
    entries: tuple[ImportanceEntry, ...]
    n_folds: int
    note: str | None = None

    def top(self, n: int) -> list[str]:
        return [e.feature for e in self.entries[:n]]


def importance_report(folds: Sequence[FoldResult] | ModelReport) -> ImportanceReport:
    """Rank features by selection frequency across folds, then mean importance.

    A fold without explicit selection counts every feature it has an
    importance for as selected. Importance is averaged over the folds that
    report importances, with unselected features contributing 0.
    """
    if isinstance(folds, ModelReport):
        folds = folds.folds
    usable = [f for f in folds if f.selected_features is not None or f.importances is not None]
    if not usable:
        raise DataError("no fold reports a feature selection or importances")
    counts: dict[str, int] = {}
    totals: dict[str, float] = {}
    n_imp = 0
    for f in usable:
        chosen = f.selected_features if f.selected_features is not None else list(f.importances)
        for name in chosen:
            counts[name] = counts.get(name, 0) + 1
        if f.importances is not None:
            n_imp += 1
            for name, v in f.importances.items():
                totals[name] = totals.get(name, 0.0) + float(v)
    names = set(counts) | set(totals)
    entries = []
    for name in names:
        imp = totals.get(name, 0.0) / n_imp if n_imp else None
        entries.append(ImportanceEntry(name, imp, counts.get(name, 0) / len(usable)))
    entries.sort(key=lambda e: (-e.frequency, -(e.importance or 0.0), e.feature))
    note = None if n_imp else "no model-based importance available; ranked by selection frequency only"
    return ImportanceReport(tuple(entries), len(usable), note)


def _roc_svg(log: DecisionLog, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pts = roc_points(log)
    with matplotlib.rc_context({"svg.hashsalt": "neuropipe", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.step([p[0] for p in pts], [p[1] for p in pts], where="post", color="k", lw=1.2)
        ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_title(f"{log.mle}  AUC={auc_rank(log):.3f}")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def render(log: DecisionLog, out_dir, fpr_grid: Sequence[float] = DEFAULT_FPR_GRID,
           model_report: ModelReport | None = None, conformal: list | None = None) -> list[Path]:
    """Write operating_table.csv, summary.json and roc.svg into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    table = operating_table(log, fpr_grid)
    sens, spec = sens_spec(log)
    summary = {
        "mle": log.mle,
        "n_decisions": len(log),
        "n_subjects": len({r.subject_id for r in log.rows}),
        "sensitivity": sens,
        "specificity": spec,
        "auc": auc_rank(log),
        "operating_table": [asdict(r) for r in table.rows],
        "notes": [POOLING_NOTE, RATE_NOTE],
    }
    if model_report is not None:
        summary["model_report"] = {k: v for k, v in model_report.to_dict().items() if k != "folds"}
        try:
            imp = importance_report(model_report)
            summary["importance"] = [asdict(e) for e in imp.entries[:50]]
            if imp.note:
                summary["notes"].append(imp.note)
        except DataError:
            pass
    if conformal is not None:
        summary["conformal"] = conformal
    paths = [out / "operating_table.csv", out / "summary.json", out / "roc.svg"]
    table.to_csv(paths[0])
    paths[1].write_text(json.dumps(summary, indent=2, sort_keys=True, allow_nan=True) + "\n",
                        encoding="utf-8")
    _roc_svg(log, paths[2])
    return paths
