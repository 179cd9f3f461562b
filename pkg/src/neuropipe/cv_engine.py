"""Nested cross-validated model search with a structural leakage guard.

Stage order inside every fit is whiten -> select -> reduce -> classify.
Each stage fit is recorded in a trace together with the ids held out at
that level, so :func:`leakage_audit` can prove that no held-out subject
ever reached a fit call.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from . import classify, dimred, selection
from .cohort import Cohort, select_task_subset
from .errors import DataError, LeakageError
from .ingest import ExperimentSpec, format_number

FAMILY_ORDER = {f: i for i, f in enumerate(("lr", "knn", "rfc", "etc", "linear_svm"))}
LOG_SCHEMA_VERSION = 1
LOG_COLUMNS = ("mle", "subject_id", "repeat", "fold", "true_status", "predicted", "score", "cell")
LEAK_STAGES = ("whiten", "select", "reduce")


def derive_seed(*keys) -> int:
    """Stable 32-bit seed from integer coordinates (negative keys allowed)."""
    # zigzag map keeps negatives distinct from non-negatives
    entropy = [2 * int(k) if int(k) >= 0 else -2 * int(k) - 1 for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


# --------------------------------------------------------------------- folds


@dataclass(frozen=True)
class FoldPlan:
    scheme: str
    k: int
    repeats: int
    seed: int
    ids: tuple[str, ...]
    assignments: tuple[tuple[int, ...], ...]  # [repeat][subject position] -> fold

    def n_folds(self):
        return self.k

    def splits(self):
        """Yield (repeat, fold, train positions, test positions)."""
        for r, assign in enumerate(self.assignments):
            a = np.asarray(assign)
            for f in range(self.k):
                yield r, f, np.flatnonzero(a != f), np.flatnonzero(a == f)

    def fold_of(self, repeat: int) -> dict[str, int]:
        return dict(zip(self.ids, self.assignments[repeat]))


def make_folds(ids: Sequence[str], labels, scheme: str = "stratified_kfold", k: int = 5,
               repeats: int = 1, seed: int = 0) -> FoldPlan:
    """Stratified repeated k-fold or leave-one-out partition of ``ids``.

    Positions refer to ``ids`` as given. Class members are shuffled per
    repeat and dealt round-robin, continuing the fold pointer across classes,
    so each fold holds floor or ceil of ``n_class / k`` members of a class.
    """
    ids = tuple(ids)
    labels = np.asarray(labels).astype(int)
    if len(ids) != labels.shape[0]:
        raise DataError("ids and labels differ in length")
    if len(set(ids)) != len(ids):
        raise DataError("duplicate ids in fold plan")
    n = len(ids)
    if scheme == "loocv":
        order = sorted(range(n), key=lambda i: ids[i])
        assign = [0] * n
        for f, i in enumerate(order):
            assign[i] = f
        return FoldPlan("loocv", n, 1, int(seed), ids, (tuple(assign),))
    if scheme != "stratified_kfold":
        raise DataError(f"unknown cv scheme {scheme!r}")
    classes = sorted(set(labels.tolist()))
    for c in classes:
        size = int(np.sum(labels == c))
        if size < k:
            raise DataError(f"class {c} has {size} members, fewer than {k} folds")
    by_id = sorted(range(n), key=lambda i: ids[i])
    assignments = []
    for r in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        assign = [0] * n
        pointer = 0
        for c in classes:
            members = [i for i in by_id if labels[i] == c]
            for i in rng.permutation(len(members)):
                assign[members[i]] = pointer % k
                pointer += 1
        assignments.append(tuple(assign))
    return FoldPlan("stratified_kfold", int(k), int(repeats), int(seed), ids, tuple(assignments))


# ------------------------------------------------------------------- cells


@dataclass(frozen=True)
class PipelineCell:
    index: int
    selection: str
    k: int | None
    reduction: str
    m: int | None
    classifier: classify.ClassifierSpec
    selection_model: str = "lr"
    lle_neighbors: int = 10
    lle_reg: float = 1e-3

    def label(self) -> str:
        parts = []
        if self.selection == "model":
            parts.append(f"model({self.selection_model},k={self.k})")
        elif self.selection != "none":
            parts.append(f"{self.selection}(k={self.k})")
        if self.reduction == "pca":
            parts.append(f"pca(m={self.m})")
        elif self.reduction == "lle":
            parts.append(f"lle(m={self.m},k={self.lle_neighbors})")
        parts.append(self.classifier.label())
        return "|".join(parts)

    def tie_key(self):
        k = self.k if self.k is not None else math.inf
        m = self.m if self.m is not None else math.inf
        return (k, m, FAMILY_ORDER[self.classifier.family], self.index)


def build_cells(spec: ExperimentSpec, n_features: int) -> list[PipelineCell]:
    """Expand the spec grids, dropping cells that need more columns than exist."""
    sels = []
    for method in spec.selection.methods:
        if method == "none":
            sels.append(("none", None))
        else:
            sels.extend((method, k) for k in spec.selection.k if k <= n_features)
    reds = []
    for method in spec.reduction.methods:
        if method == "none":
            reds.append(("none", None))
        else:
            reds.extend((method, m) for m in spec.reduction.components)
    clfs = [s for g in spec.classifiers for s in g.specs(spec.cv.seed)]
    cells = []
    for smethod, k in sels:
        width = k if k is not None else n_features
        for rmethod, m in reds:
            if m is not None and (m > width or (rmethod == "lle" and m >= spec.reduction.neighbors)):
                continue
            for c in clfs:
                cells.append(PipelineCell(len(cells), smethod, k, rmethod, m, c,
                                          spec.selection.model, spec.reduction.neighbors,
                                          spec.reduction.regularizer))
    if not cells:
        raise DataError(f"grid is empty for {n_features} features")
    return cells


# ------------------------------------------------------------------ tracing


@dataclass(frozen=True)
class TraceEntry:
    repeat: int
    fold: int
    inner: int  # -1 for the outer refit
    cell: int
    stage: str
    fit: tuple[int, ...]       # task positions the stage was fitted on
    held_out: tuple[int, ...]  # task positions held out at that level


@dataclass(frozen=True)
class Violation:
    repeat: int
    fold: int
    inner: int
    cell: int
    stage: str
    leaked_ids: tuple[str, ...]


@dataclass
class Trace:
    ids: tuple[str, ...]
    entries: list[TraceEntry] = field(default_factory=list)

    def to_dict(self):
        return {"schema_version": LOG_SCHEMA_VERSION, "ids": list(self.ids),
                "entries": [[e.repeat, e.fold, e.inner, e.cell, e.stage, list(e.fit), list(e.held_out)]
                            for e in self.entries]}

    @classmethod
    def from_dict(cls, d):
        entries = [TraceEntry(r, f, i, c, s, tuple(fit), tuple(ho)) for r, f, i, c, s, fit, ho in d["entries"]]
        return cls(tuple(d["ids"]), entries)


def leakage_audit(trace: Trace) -> list[Violation]:
    """Every fit call whose subjects intersect the ids held out at its level."""
    out = []
    for e in trace.entries:
        leaked = set(e.fit) & set(e.held_out)
        if leaked:
            out.append(Violation(e.repeat, e.fold, e.inner, e.cell, e.stage,
                                 tuple(sorted(trace.ids[i] for i in leaked))))
    return out


# ---------------------------------------------------------------- pipeline


class FittedPipeline:
    """Whitener, column selection, reducer and classifier fitted together."""

    def __init__(self, cell, whitener, selected, reducer, model, fit_ids):
        self.cell = cell
        self.whitener = whitener
        self.selected = selected
        self.reducer = reducer
        self.model = model
        self.fit_ids = frozenset(fit_ids)

    def transform(self, X):
        Z = self.whitener.apply(X)
        if self.selected is not None:
            Z = Z[:, self.selected]
        if self.reducer is not None:
            Z = self.reducer.transform(Z)
        return Z

    def decision_score(self, X):
        return self.model.decision_score(self.transform(X))

    def predict(self, X):
        return self.model.predict(self.transform(X))


class _Recorder:
    def __init__(self, sink, repeat, fold, inner, cell, held_out):
        self.sink = sink
        self.key = (repeat, fold, inner, cell)
        self.held_out = tuple(sorted(int(i) for i in held_out))

    def __call__(self, stage, fit_positions):
        if self.sink is not None:
            self.sink.append(TraceEntry(*self.key, stage, tuple(sorted(int(i) for i in fit_positions)),
                                        self.held_out))


def fit_pipeline(cell: PipelineCell, X, y, train, seed, record=None,
                 leak: str | None = None, ids=None) -> FittedPipeline:
    """Fit ``cell`` on rows ``train`` of (X, y).

    ``leak`` names a stage to fit on every row of X instead (negative
    control for the audit); never set it outside diagnostics.
    """
    record = record or (lambda stage, pos: None)
    everything = np.arange(X.shape[0])

    def rows_for(stage):
        return everything if leak == stage else train

    w_rows = rows_for("whiten")
    whitener = dimred.whiten_fit(X[w_rows])
    record("whiten", w_rows)
    Z_all = whitener.apply(X)
    ytr = y[train]

    selected = None
    if cell.selection != "none":
        s_rows = rows_for("select")
        Zs, ys = Z_all[s_rows], y[s_rows]
        if cell.selection == "anova":
            selected = selection.anova_f(Zs, ys).top_k(cell.k)
        elif cell.selection == "chi2":
            selected = selection.chi2_scores(Zs, ys, shift=True).top_k(cell.k)
        else:
            selected = selection.model_based_select(Zs, ys, cell.selection_model, cell.k,
                                                    seed=derive_seed(seed, 1))
        record("select", s_rows)
        Z_all = Z_all[:, selected]

    reducer = None
    if cell.reduction != "none":
        r_rows = rows_for("reduce")
        if cell.reduction == "pca":
            reducer = dimred.pca_fit(Z_all[r_rows], cell.m)
        else:
            reducer = dimred.lle_embed(Z_all[r_rows], cell.lle_neighbors, cell.m, cell.lle_reg)
        record("reduce", r_rows)
        Z_all = reducer.transform(Z_all)

    model = classify.fit(cell.classifier, Z_all[train], ytr, seed=derive_seed(seed, 2))
    record("classify", train)
    fit_ids = [ids[i] for i in train] if ids is not None else ()
    return FittedPipeline(cell, whitener, selected, reducer, model, fit_ids)


def balanced_accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    rates = []
    for c in (0, 1):
        mask = y_true == c
        if mask.any():
            rates.append(float(np.mean(y_pred[mask] == c)))
    return float(np.mean(rates))


# ------------------------------------------------------------ decision log


@dataclass(frozen=True, order=True)
class DecisionRow:
    repeat: int
    fold: int
    subject_id: str
    true_status: int
    predicted: int
    score: float
    cell: str


@dataclass
class DecisionLog:
    """Per-subject test decisions of one experiment (one row per subject and repeat)."""

    mle: str
    rows: list[DecisionRow] = field(default_factory=list)

    def sorted(self) -> "DecisionLog":
        return DecisionLog(self.mle, sorted(self.rows))

    def __len__(self):
        return len(self.rows)

    def arrays(self):
        y = np.array([r.true_status for r in self.rows], dtype=int)
        pred = np.array([r.predicted for r in self.rows], dtype=int)
        score = np.array([r.score for r in self.rows], dtype=float)
        return y, pred, score

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# neuropipe decision log, schema {LOG_SCHEMA_VERSION}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in sorted(self.rows):
                w.writerow([self.mle, r.subject_id, r.repeat, r.fold, r.true_status, r.predicted,
                            format_number(r.score), r.cell])

    @classmethod
    def from_csv(cls, path) -> "DecisionLog":
        with open(path, encoding="utf-8", newline="") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
        reader = csv.reader(lines)
        header = tuple(next(reader, ()))
        if header != LOG_COLUMNS:
            raise DataError(f"{path}: decision log header {header} != {LOG_COLUMNS}")
        mle, rows = None, []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(LOG_COLUMNS):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells")
            if mle is None:
                mle = row[0]
            elif row[0] != mle:
                raise DataError(f"{path}: mixes experiments {mle!r} and {row[0]!r}")
            rows.append(DecisionRow(int(row[2]), int(row[3]), row[1], int(row[4]), int(row[5]),
                                    float(row[6]), row[7]))
        return cls(mle or "", rows)


# ----------------------------------------------------------------- results


@dataclass
class FoldResult:
    repeat: int
    fold: int
    cell: str
    cell_index: int
    inner_score: float | None
    selected_features: list[str] | None
    importances: dict[str, float] | None


@dataclass
class ModelReport:
    mle: str
    n_subjects: int
    n_features: int
    accuracy: float
    sensitivity: float
    specificity: float
    balanced_accuracy: float
    folds: list[FoldResult]
    violations: list[Violation] = field(default_factory=list)

    def winning_cells(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for f in self.folds:
            counts[f.cell] = counts.get(f.cell, 0) + 1
        return dict(sorted(counts.items()))

    def to_dict(self):
        return {
            "mle": self.mle, "n_subjects": self.n_subjects, "n_features": self.n_features,
            "accuracy": self.accuracy, "sensitivity": self.sensitivity,
            "specificity": self.specificity, "balanced_accuracy": self.balanced_accuracy,
            "winning_cells": self.winning_cells(),
            "folds": [vars(f) for f in self.folds],
            "leakage_violations": [vars(v) | {"leaked_ids": list(v.leaked_ids)} for v in self.violations],
        }


@dataclass
class RunResult:
    log: DecisionLog
    report: ModelReport
    trace: Trace

    def __iter__(self):
        return iter((self.log, self.report))


def select_cell(cells, X, y, ids, train, test, seed, repeat, fold, inner_folds=5, leak=None, sink=None):
    """Inner grid search on ``train``; returns (best cell, inner balanced accuracy).

    A single-cell grid is returned as is, without an inner search.
    """
    if len(cells) == 1:
        return cells[0], None
    ytr = y[train]
    n_inner = min(inner_folds, int(np.bincount(ytr, minlength=2).min()))
    if n_inner < 2:
        raise DataError(f"repeat {repeat} fold {fold}: too few training subjects per class "
                        f"for an inner search")
    inner = make_folds([ids[i] for i in train], ytr, "stratified_kfold", n_inner, 1,
                       derive_seed(seed, repeat, fold))
    splits = [(f, train[tr], train[te]) for _, f, tr, te in inner.splits()]
    scored = []
    for cell in cells:
        preds, truth = [], []
        try:
            for f, itr, ite in splits:
                rec = _Recorder(sink, repeat, fold, f, cell.index, np.concatenate([ite, test]))
                pipe = fit_pipeline(cell, X, y, itr, derive_seed(seed, repeat, fold, f, cell.index),
                                    rec, leak)
                preds.append(pipe.predict(X[ite]))
                truth.append(y[ite])
        except DataError:
            # cell not fittable at this sample size (e.g. too many components)
            continue
        scored.append((balanced_accuracy(np.concatenate(truth), np.concatenate(preds)), cell))
    if not scored:
        raise DataError(f"repeat {repeat} fold {fold}: no grid cell could be fitted")
    top = max(s for s, _ in scored)
    best = min((c for s, c in scored if s == top), key=PipelineCell.tie_key)
    return best, top


def _evaluate_outer(cells, X, y, ids, names, repeat, fold, train, test, seed, inner_folds,
                    leak, traced):
    with threadpool_limits(limits=1):
        sink = [] if traced else None
        best, inner_score = select_cell(cells, X, y, ids, train, test, seed, repeat, fold,
                                        inner_folds, leak, sink)
        rec = _Recorder(sink, repeat, fold, -1, best.index, test)
        pipe = fit_pipeline(best, X, y, train, derive_seed(seed, repeat, fold, -1, best.index),
                            rec, leak, ids)
        score = pipe.decision_score(X[test])
        pred = pipe.predict(X[test])
        rows = [DecisionRow(repeat, fold, ids[i], int(y[i]), int(p), float(s), best.label())
                for i, p, s in zip(test, pred, score)]
        selected = None if pipe.selected is None else [names[j] for j in pipe.selected]
        importances = None
        imp = pipe.model.feature_importance()
        if imp is not None and pipe.reducer is None:
            cols = selected if selected is not None else list(names)
            importances = {c: float(v) for c, v in zip(cols, imp)}
        result = FoldResult(repeat, fold, best.label(), best.index, inner_score, selected, importances)
        return rows, result, sink or []


def _rates(y, pred):
    tp = int(np.sum((y == 1) & (pred == 1)))
    tn = int(np.sum((y == 0) & (pred == 0)))
    pos, neg = int(np.sum(y == 1)), int(np.sum(y == 0))
    sens = tp / pos if pos else float("nan")
    spec = tn / neg if neg else float("nan")
    return (tp + tn) / len(y), sens, spec


def run_experiment(spec: ExperimentSpec, cohort: Cohort, jobs: int = 1, debug_leak: str | None = None,
                   traced: bool = True) -> RunResult:
    """Outer CV with an inner grid search on each outer-train split.

    Raises
    ------
    LeakageError
        If the trace shows a held-out subject in any fit call (unless the
        leak was requested through ``debug_leak``).
    """
    if debug_leak is not None and debug_leak not in LEAK_STAGES:
        raise DataError(f"debug_leak must be one of {LEAK_STAGES}")
    matrix, y, ids = select_task_subset(cohort, spec.task, spec.blocks)
    X = np.asarray(matrix.values, dtype=float)
    if not np.all(np.isfinite(X)):
        raise DataError("task matrix contains NaN or Inf; validate the cohort first")
    names = matrix.feature_names
    cells = build_cells(spec, X.shape[1])
    plan = make_folds(ids, y, spec.cv.scheme, spec.cv.folds, spec.cv.repeats, spec.cv.seed)
    seed = spec.cv.seed
    tasks = list(plan.splits())
    args = (cells, X, y, ids, names)
    if jobs == 1:
        outs = [_evaluate_outer(*args, r, f, tr, te, seed, spec.cv.inner_folds, debug_leak, traced)
                for r, f, tr, te in tasks]
    else:
        outs = Parallel(n_jobs=jobs)(
            delayed(_evaluate_outer)(*args, r, f, tr, te, seed, spec.cv.inner_folds, debug_leak, traced)
            for r, f, tr, te in tasks)
    rows = sorted(r for rs, _, _ in outs for r in rs)
    folds = sorted((fr for _, fr, _ in outs), key=lambda f: (f.repeat, f.fold))
    trace = Trace(tuple(ids), [e for _, _, es in outs for e in es])
    log = DecisionLog(spec.name, rows)
    ylog, pred, _ = log.arrays()
    acc, sens, spec_ = _rates(ylog, pred)
    violations = leakage_audit(trace) if traced else []
    report = ModelReport(spec.name, len(ids), X.shape[1], acc, sens, spec_, (sens + spec_) / 2.0,
                         folds, violations)
    if violations and debug_leak is None:
        raise LeakageError(violations)
    return RunResult(log, report, trace)


def conformal_experiment(spec: ExperimentSpec, cohort: Cohort, epsilon: float = 0.1,
                         calib_fraction: float = 0.3, jobs: int = 1):
    """Split-conformal p-values for every subject of the task.

    For each outer fold of the first repeat, the outer-train split is
    divided (stratified) into a proper-training part, where the grid search
    and final fit happen, and a calibration part. Returns a list of
    per-subject dicts sorted by id.
    """
    from . import conformal

    matrix, y, ids = select_task_subset(cohort, spec.task, spec.blocks)
    X = np.asarray(matrix.values, dtype=float)
    cells = build_cells(spec, X.shape[1])
    plan = make_folds(ids, y, spec.cv.scheme, spec.cv.folds, 1, spec.cv.seed)
    seed = spec.cv.seed
    out = []
    for _, fold, train, test in plan.splits():
        rng = np.random.default_rng(np.random.SeedSequence([seed, fold, 7]))
        calib_parts, proper_parts = [], []
        for c in (0, 1):
            members = train[y[train] == c]
            members = members[rng.permutation(len(members))]
            n_cal = max(1, int(round(calib_fraction * len(members))))
            calib_parts.append(members[:n_cal])
            proper_parts.append(members[n_cal:])
        calib = np.sort(np.concatenate(calib_parts))
        proper = np.sort(np.concatenate(proper_parts))
        held = np.concatenate([calib, test])
        with threadpool_limits(limits=1):
            best, _ = select_cell(cells, X, y, ids, proper, held, seed, 0, fold, spec.cv.inner_folds)
            pipe = fit_pipeline(best, X, y, proper, derive_seed(seed, 0, fold, -1, best.index), ids=ids)
        cal = conformal.calibrate(pipe, X[calib], y[calib], ids=[ids[i] for i in calib])
        for i in test:
            p = [conformal.p_value(cal, X[i], label) for label in (0, 1)]
            out.append({"subject_id": ids[i], "fold": fold, "true_status": int(y[i]),
                        "p0": p[0], "p1": p[1],
                        "prediction_set": [lab for lab in (0, 1) if p[lab] > epsilon],
                        "cell": best.label()})
    return sorted(out, key=lambda d: d["subject_id"])
