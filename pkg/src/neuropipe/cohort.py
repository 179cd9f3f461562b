"""Subjects, feature blocks and binary task definitions.

Everything downstream aligns rows by subject id, never by position, and
every id-ordered output is sorted so that fold assignment depends on the
seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError

BLOCK_KINDS = ("morphometry", "graph", "topology", "combined")


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    status: str
    covariates: Mapping[str, float | str] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Dense subjects x features block with named rows and columns.

    ``values`` is stored read-only. NaN cells are allowed at construction
    time so that :func:`validate_cohort` can report them; loaders reject
    them outright.
    """

    subject_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    values: np.ndarray
    block_kind: str = "morphometry"
    provenance: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            raise DataError(f"feature values must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        object.__setattr__(self, "feature_names", tuple(str(f) for f in self.feature_names))
        if values.shape != (len(self.subject_ids), len(self.feature_names)):
            raise DataError(
                f"values shape {values.shape} does not match "
                f"{len(self.subject_ids)} subjects x {len(self.feature_names)} features"
            )
        if len(set(self.feature_names)) != len(self.feature_names):
            dupes = sorted({f for f in self.feature_names if self.feature_names.count(f) > 1})
            raise DataError(f"duplicate feature names: {dupes}")
        if self.block_kind not in BLOCK_KINDS:
            raise DataError(f"unknown block kind {self.block_kind!r}; expected one of {BLOCK_KINDS}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def shape(self):
        return self.values.shape

    def row_index(self) -> dict[str, int]:
        # first occurrence wins; duplicates are a validation finding
        index: dict[str, int] = {}
        for i, sid in enumerate(self.subject_ids):
            index.setdefault(sid, i)
        return index

    def take(self, ids: Sequence[str]) -> np.ndarray:
        """Rows for ``ids`` in the given order."""
        index = self.row_index()
        missing = [s for s in ids if s not in index]
        if missing:
            raise DataError(f"block has no rows for subjects {missing[:5]}")
        return self.values[[index[s] for s in ids]]

    def subset(self, ids: Sequence[str]) -> "FeatureMatrix":
        return FeatureMatrix(tuple(ids), self.feature_names, self.take(ids),
                             self.block_kind, self.provenance)

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (self.subject_ids == other.subject_ids
                and self.feature_names == other.feature_names
                and self.block_kind == other.block_kind
                and np.array_equal(self.values, other.values, equal_nan=True))


@dataclass(frozen=True, eq=False)
class ConnectivityMatrix:
    """Weighted adjacency over named ROIs; the diagonal is always zero."""

    roi_names: tuple[str, ...]
    weights: np.ndarray
    directed: bool = False

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DataError(f"connectivity matrix must be square, got shape {w.shape}")
        if w.shape[0] != len(self.roi_names):
            raise DataError(f"{len(self.roi_names)} ROI names for a {w.shape[0]}x{w.shape[0]} matrix")
        np.fill_diagonal(w, 0.0)
        w.setflags(write=False)
        object.__setattr__(self, "roi_names", tuple(str(r) for r in self.roi_names))
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return len(self.roi_names)

    def __eq__(self, other):
        if not isinstance(other, ConnectivityMatrix):
            return NotImplemented
        return (self.roi_names == other.roi_names and self.directed == other.directed
                and np.array_equal(self.weights, other.weights))


@dataclass(frozen=True)
class TaskDefinition:
    """Binary task: statuses mapped to class 1 (CS1) versus class 0 (CS2)."""

    name: str
    positive_statuses: frozenset[str]
    negative_statuses: frozenset[str]

    def __post_init__(self):
        pos = frozenset(self.positive_statuses)
        neg = frozenset(self.negative_statuses)
        object.__setattr__(self, "positive_statuses", pos)
        object.__setattr__(self, "negative_statuses", neg)
        if not pos or not neg:
            raise DataError(f"task {self.name}: positive and negative status sets must be non-empty")
        overlap = pos & neg
        if overlap:
            raise DataError(f"task {self.name}: statuses {sorted(overlap)} appear in both classes")

    def label_of(self, status: str) -> int | None:
        if status in self.positive_statuses:
            return 1
        if status in self.negative_statuses:
            return 0
        return None


# Status alphabet used by the built-in tasks: E epilepsy, D depression,
# DE both, H healthy; TLE-P / TLE-N / NTLE refine E by lesion evidence.
KNOWN_TASKS = {
    "EvsH": ({"E"}, {"H"}),
    "DvsH": ({"D"}, {"H"}),
    "DEvsE": ({"DE"}, {"E"}),
    "EvsNE": ({"E", "DE"}, {"D", "H"}),
    "DvsND": ({"D", "DE"}, {"E", "H"}),
    "TLEvsH": ({"TLE-P", "TLE-N"}, {"H"}),
    "TLEPvsH": ({"TLE-P"}, {"H"}),
    "TLENvsH": ({"TLE-N"}, {"H"}),
    "NTLEvsH": ({"NTLE"}, {"H"}),
}


def get_task(name: str, positive=None, negative=None) -> TaskDefinition:
    """Built-in task by name, or a custom one when both status sets are given."""
    if positive is not None and negative is not None:
        return TaskDefinition(name, frozenset(positive), frozenset(negative))
    if name not in KNOWN_TASKS:
        raise DataError(f"unknown task {name!r} without explicit status sets; "
                        f"built-in tasks: {sorted(KNOWN_TASKS)}")
    pos, neg = KNOWN_TASKS[name]
    return TaskDefinition(name, frozenset(pos), frozenset(neg))


@dataclass(frozen=True)
class Cohort:
    subjects: tuple[SubjectRecord, ...]
    blocks: Mapping[str, FeatureMatrix] = field(default_factory=dict)
    connectivity: Mapping[str, ConnectivityMatrix] = field(default_factory=dict)
    status_alphabet: frozenset[str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "blocks", dict(self.blocks))
        object.__setattr__(self, "connectivity", dict(self.connectivity))

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.subjects]

    def subject(self, sid: str) -> SubjectRecord:
        for s in self.subjects:
            if s.id == sid:
                return s
        raise DataError(f"unknown subject id {sid!r}")

    def status_of(self) -> dict[str, str]:
        return {s.id: s.status for s in self.subjects}

    def with_block(self, name: str, block: FeatureMatrix) -> "Cohort":
        blocks = dict(self.blocks)
        blocks[name] = block
        return Cohort(self.subjects, blocks, self.connectivity, self.status_alphabet)


@dataclass
class ValidationReport:
    duplicate_ids: list[tuple[str, str, list[int]]] = field(default_factory=list)
    missing_rows: list[tuple[str, str]] = field(default_factory=list)
    unknown_rows: list[tuple[str, str]] = field(default_factory=list)
    nonfinite_cells: list[tuple[str, str, str]] = field(default_factory=list)
    bad_statuses: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.duplicate_ids or self.missing_rows or self.unknown_rows
                    or self.nonfinite_cells or self.bad_statuses)

    def __bool__(self):
        # truthy when there is something to report
        return not self.ok

    def lines(self) -> list[str]:
        out = []
        for where, sid, rows in self.duplicate_ids:
            out.append(f"duplicate id {sid!r} in {where} at rows {rows}")
        for block, sid in self.missing_rows:
            out.append(f"block {block}: no row for subject {sid!r}")
        for block, sid in self.unknown_rows:
            out.append(f"block {block}: row for unknown subject {sid!r}")
        for block, sid, feat in self.nonfinite_cells:
            out.append(f"block {block}: non-finite value at ({sid!r}, {feat!r})")
        for sid, status in self.bad_statuses:
            out.append(f"subject {sid!r}: status {status!r} not in alphabet")
        return out


def validate_cohort(cohort: Cohort) -> ValidationReport:
    """Collect every structural problem without raising.

    Row indices in duplicate findings are 0-based positions within the
    subject list or block.
    """
    report = ValidationReport()

    def dupes(ids):
        seen: dict[str, list[int]] = {}
        for i, sid in enumerate(ids):
            seen.setdefault(sid, []).append(i)
        return [(sid, rows) for sid, rows in seen.items() if len(rows) > 1]

    for sid, rows in dupes(cohort.ids):
        report.duplicate_ids.append(("subjects", sid, rows))
    if cohort.status_alphabet is not None:
        for s in cohort.subjects:
            if s.status not in cohort.status_alphabet:
                report.bad_statuses.append((s.id, s.status))

    known = set(cohort.ids)
    for name in sorted(cohort.blocks):
        block = cohort.blocks[name]
        for sid, rows in dupes(block.subject_ids):
            report.duplicate_ids.append((name, sid, rows))
        present = set(block.subject_ids)
        for sid in sorted(known - present):
            report.missing_rows.append((name, sid))
        for sid in sorted(present - known):
            report.unknown_rows.append((name, sid))
        bad_r, bad_c = np.nonzero(~np.isfinite(block.values))
        for r, c in zip(bad_r, bad_c):
            report.nonfinite_cells.append((name, block.subject_ids[r], block.feature_names[c]))
    for sid in sorted(cohort.connectivity):
        if sid not in known:
            report.unknown_rows.append(("connectivity", sid))
    return report


def combine_blocks(cohort: Cohort, names: Sequence[str]) -> FeatureMatrix:
    """Id-aligned horizontal concatenation of several blocks.

    Only subjects present in every block are kept. Feature names are
    prefixed with the block name when more than one block is combined.
    """
    for name in names:
        if name not in cohort.blocks:
            raise DataError(f"unknown block {name!r}; available: {sorted(cohort.blocks)}")
    if len(names) == 1:
        return cohort.blocks[names[0]]
    common = set(cohort.blocks[names[0]].subject_ids)
    for name in names[1:]:
        common &= set(cohort.blocks[name].subject_ids)
    ids = sorted(common)
    parts, feats = [], []
    for name in names:
        b = cohort.blocks[name]
        parts.append(b.take(ids))
        feats.extend(f"{name}:{f}" for f in b.feature_names)
    return FeatureMatrix(tuple(ids), tuple(feats), np.hstack(parts), "combined",
                         {"blocks": ",".join(names)})


def select_task_subset(cohort: Cohort, task: TaskDefinition, block="morphometry"):
    """Rows and binary labels for the subjects a task covers.

    Parameters
    ----------
    cohort : Cohort
    task : TaskDefinition
    block : str or sequence of str
        Block name(s); several names are combined by id.

    Returns
    -------
    matrix : FeatureMatrix
        Rows sorted by subject id.
    labels : ndarray of int
        1 for the task's positive statuses, 0 for the negative ones.
    ids : list of str
    """
    names = [block] if isinstance(block, str) else list(block)
    matrix = combine_blocks(cohort, names)
    ids, labels = [], []
    for s in sorted(cohort.subjects, key=lambda s: s.id):
        y = task.label_of(s.status)
        if y is not None:
            ids.append(s.id)
            labels.append(y)
    labels = np.asarray(labels, dtype=int)
    for cls, tag in ((1, "positive"), (0, "negative")):
        if not np.any(labels == cls):
            raise DataError(f"task {task.name}: empty class ({tag} statuses "
                            f"{sorted(task.positive_statuses if cls else task.negative_statuses)} match no subject)")
    present = set(matrix.subject_ids)
    missing = [s for s in ids if s not in present]
    if missing:
        raise DataError(f"task {task.name}: block {'+'.join(names)} has no rows for {missing[:5]}")
    return matrix.subset(ids), labels, ids
