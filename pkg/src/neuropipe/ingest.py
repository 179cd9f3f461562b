"""Readers and writers for feature tables, connectivity files, experiment
specs and cohort directories.

Cohort directory layout::

    subjects.csv          id, status, then optional covariate columns
    blocks/<name>.csv     one feature table per block
    connectivity/<id>.csv optional, one matrix per subject

Numbers are parsed strictly: plain decimals with optional exponent, no
locale commas, no NaN/Inf literals.
"""

from __future__ import annotations

import csv
import io
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import tomli
import tomli_w

from . import classify, selection
from .cohort import (
    Cohort,
    ConnectivityMatrix,
    FeatureMatrix,
    SubjectRecord,
    TaskDefinition,
    get_task,
)
from .errors import DataError, ParseError

DELIMITERS = (",", "\t", ";")
SYMMETRY_TOL = 1e-9
SPEC_SCHEMA_VERSION = 1
_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


def detect_delimiter(header: str) -> str:
    counts = {d: header.count(d) for d in DELIMITERS}
    best = max(DELIMITERS, key=lambda d: counts[d])
    return best if counts[best] > 0 else ","


def parse_number(text: str, path=None, line=None, column=None) -> float:
    s = text.strip()
    if not _NUMBER.match(s):
        raise ParseError(f"non-numeric cell {text!r}", path, line, column)
    return float(s)


def format_number(x: float) -> str:
    # repr round-trips exactly; integral floats keep a trailing '.0'
    return repr(float(x))


def _read_lines(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return fh.read()
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8 ({exc.reason})", path) from None


def _rows(text, delimiter, path=None):
    try:
        return list(csv.reader(io.StringIO(text), delimiter=delimiter))
    except csv.Error as exc:
        raise ParseError(f"malformed delimited text: {exc}", path) from None


# ------------------------------------------------------------ feature tables


def load_feature_table(path, block_kind: str = "morphometry") -> FeatureMatrix:
    """Parse a delimited feature table (first column: subject id)."""
    text = _read_lines(path)
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("empty file", path, 1)
    delimiter = detect_delimiter(lines[0])
    rows = _rows(text, delimiter, path)
    header = rows[0]
    if len(header) < 2:
        raise ParseError("header needs an id column and at least one feature", path, 1)
    names = [h.strip() for h in header[1:]]
    seen = {}
    for col, name in enumerate(names, start=2):
        if not name:
            raise ParseError("empty feature name", path, 1, col)
        if name in seen:
            raise ParseError(f"duplicate header {name!r} (also column {seen[name]})", path, 1, col)
        seen[name] = col
    ids, values, id_line = [], [], {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"row has {len(row)} cells, header has {len(header)}", path, lineno)
        sid = row[0].strip()
        if not sid:
            raise ParseError("empty subject id", path, lineno, 1)
        if sid in id_line:
            raise ParseError(f"duplicate subject id {sid!r} (also line {id_line[sid]})", path, lineno, 1)
        id_line[sid] = lineno
        ids.append(sid)
        values.append([parse_number(c, path, lineno, col) for col, c in enumerate(row[1:], start=2)])
    arr = np.asarray(values, dtype=float).reshape(len(ids), len(names))
    return FeatureMatrix(tuple(ids), tuple(names), arr, block_kind,
                         {"path": str(path), "delimiter": delimiter})


def write_feature_table(matrix: FeatureMatrix, path, delimiter: str = ",", id_header: str = "id"):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow([id_header, *matrix.feature_names])
        for sid, row in zip(matrix.subject_ids, matrix.values):
            w.writerow([sid, *(format_number(x) for x in row)])


# --------------------------------------------------------------- connectivity


def load_connectivity(path, kind: str | None = None) -> ConnectivityMatrix:
    """Parse an ROI-named square matrix.

    Line 1 may carry a ``# directed`` / ``# undirected`` pragma; ``kind``
    overrides a missing pragma and must agree with a present one.
    """
    text = _read_lines(path)
    lines = text.splitlines()
    pragma = None
    start = 0
    if lines and lines[0].lstrip().startswith("#"):
        word = lines[0].lstrip()[1:].strip().lower()
        if word not in ("directed", "undirected"):
            raise ParseError(f"unknown pragma {lines[0].strip()!r}", path, 1)
        pragma = word
        start = 1
    if kind is not None and kind not in ("directed", "undirected"):
        raise DataError(f"kind must be 'directed' or 'undirected', got {kind!r}")
    if pragma and kind and pragma != kind:
        raise ParseError(f"file declares {pragma} but {kind} was requested", path, 1)
    kind = pragma or kind or "undirected"
    body = "\n".join(lines[start:])
    if not body.strip():
        raise ParseError("missing ROI header", path, start + 1)
    delimiter = detect_delimiter(lines[start])
    rows = [r for r in _rows(body, delimiter, path) if r and any(c.strip() for c in r)]
    names = [c.strip() for c in rows[0]]
    if len(set(names)) != len(names):
        raise ParseError("duplicate ROI names", path, start + 1)
    n = len(names)
    data = rows[1:]
    if len(data) != n:
        raise ParseError(f"not square: {n} ROI names but {len(data)} matrix rows", path)
    W = np.empty((n, n))
    for r, row in enumerate(data):
        lineno = start + 2 + r
        if len(row) != n:
            raise ParseError(f"not square: row has {len(row)} cells, expected {n}", path, lineno)
        W[r] = [parse_number(c, path, lineno, col) for col, c in enumerate(row, start=1)]
    np.fill_diagonal(W, 0.0)
    if kind == "undirected":
        bad = np.argwhere(np.abs(W - W.T) > SYMMETRY_TOL)
        if bad.size:
            i, j = bad[0]
            raise ParseError(f"asymmetric undirected matrix: ({i + 1},{j + 1})={W[i, j]!r} "
                             f"vs ({j + 1},{i + 1})={W[j, i]!r}", path)
    return ConnectivityMatrix(tuple(names), W, directed=(kind == "directed"))


def write_connectivity(matrix: ConnectivityMatrix, path, delimiter: str = ","):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# directed\n" if matrix.directed else "# undirected\n")
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(matrix.roi_names)
        for row in matrix.weights:
            w.writerow([format_number(x) for x in row])


# ------------------------------------------------------------ cohort directory


def _covariate(text):
    s = text.strip()
    if s == "":
        return None
    return float(s) if _NUMBER.match(s) else s


def load_subjects(path) -> list[SubjectRecord]:
    text = _read_lines(path)
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", path, 1)
    rows = _rows(text, detect_delimiter(lines[0]), path)
    header = [h.strip() for h in rows[0]]
    if header[:2] != ["id", "status"]:
        raise ParseError("subjects table must start with columns id,status", path, 1)
    out, seen = [], {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"row has {len(row)} cells, header has {len(header)}", path, lineno)
        sid = row[0].strip()
        if sid in seen:
            raise ParseError(f"duplicate subject id {sid!r} (also line {seen[sid]})", path, lineno, 1)
        seen[sid] = lineno
        cov = {}
        for name, cell in zip(header[2:], row[2:]):
            value = _covariate(cell)
            if value is not None:
                cov[name] = value
        out.append(SubjectRecord(sid, row[1].strip(), cov))
    return out


def write_subjects(subjects, path, covariate_names=None):
    if covariate_names is None:
        covariate_names = sorted({k for s in subjects for k in s.covariates})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "status", *covariate_names])
        for s in subjects:
            cells = []
            for name in covariate_names:
                v = s.covariates.get(name)
                cells.append("" if v is None else (format_number(v) if isinstance(v, float) else str(v)))
            w.writerow([s.id, s.status, *cells])


_BLOCK_KIND_BY_NAME = {"morphometry": "morphometry", "graph": "graph", "topology": "topology"}


def load_cohort(directory) -> Cohort:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d}: cohort directory not found")
    subjects = load_subjects(d / "subjects.csv")
    blocks = {}
    bdir = d / "blocks"
    if bdir.is_dir():
        for f in sorted(bdir.iterdir()):
            if f.suffix in (".csv", ".tsv"):
                kind = _BLOCK_KIND_BY_NAME.get(f.stem, "morphometry")
                blocks[f.stem] = load_feature_table(f, kind)
    conn = {}
    cdir = d / "connectivity"
    if cdir.is_dir():
        for f in sorted(cdir.iterdir()):
            if f.suffix in (".csv", ".tsv"):
                conn[f.stem] = load_connectivity(f)
    return Cohort(tuple(subjects), blocks, conn)


def write_cohort(cohort: Cohort, directory):
    d = Path(directory)
    (d / "blocks").mkdir(parents=True, exist_ok=True)
    write_subjects(cohort.subjects, d / "subjects.csv")
    for name, block in sorted(cohort.blocks.items()):
        write_feature_table(block, d / "blocks" / f"{name}.csv")
    if cohort.connectivity:
        (d / "connectivity").mkdir(exist_ok=True)
        for sid, m in sorted(cohort.connectivity.items()):
            write_connectivity(m, d / "connectivity" / f"{sid}.csv")


# ------------------------------------------------------------ experiment spec

REDUCTION_METHODS = ("none", "pca", "lle")
CV_SCHEMES = ("stratified_kfold", "loocv")
DEFAULT_FPR_GRID = (0.10, 0.15, 0.20, 0.30)


@dataclass(frozen=True)
class ReductionGrid:
    methods: tuple[str, ...] = ("none",)
    components: tuple[int, ...] = (5, 10, 15, 20)
    neighbors: int = 10
    regularizer: float = 1e-3


@dataclass(frozen=True)
class SelectionGrid:
    methods: tuple[str, ...] = ("none",)
    k: tuple[int, ...] = (10, 20, 50, 100)
    model: str = "lr"


@dataclass(frozen=True)
class ClassifierGrid:
    family: str
    grid: Mapping[str, tuple] = field(default_factory=dict)

    def specs(self, seed: int = 0) -> list[classify.ClassifierSpec]:
        keys = sorted(self.grid)
        combos = [{}]
        for key in keys:
            combos = [{**c, key: v} for c in combos for v in self.grid[key]]
        return [classify.ClassifierSpec(self.family, c, seed) for c in combos]


@dataclass(frozen=True)
class CVPlanSpec:
    scheme: str = "stratified_kfold"
    folds: int = 5
    repeats: int = 10
    seed: int = 0
    inner_folds: int = 5


@dataclass(frozen=True)
class ExperimentSpec:
    """The (task, dataset, algorithm) triplet plus its search grids."""

    name: str
    task: TaskDefinition
    blocks: tuple[str, ...]
    classifiers: tuple[ClassifierGrid, ...]
    reduction: ReductionGrid = ReductionGrid()
    selection: SelectionGrid = SelectionGrid()
    cv: CVPlanSpec = CVPlanSpec()
    fpr_grid: tuple[float, ...] = DEFAULT_FPR_GRID
    schema_version: int = SPEC_SCHEMA_VERSION

    def with_seed(self, seed: int) -> "ExperimentSpec":
        return replace(self, cv=replace(self.cv, seed=int(seed)))

    def to_dict(self) -> dict:
        def none_to_str(v):
            return "none" if v is None else v

        return {
            "schema_version": self.schema_version,
            "name": self.name,
            "task": {"name": self.task.name,
                     "positive": sorted(self.task.positive_statuses),
                     "negative": sorted(self.task.negative_statuses)},
            "data": {"blocks": list(self.blocks)},
            "reduction": {"method": list(self.reduction.methods),
                          "components": list(self.reduction.components),
                          "neighbors": self.reduction.neighbors,
                          "regularizer": self.reduction.regularizer},
            "selection": {"method": list(self.selection.methods),
                          "k": list(self.selection.k),
                          "model": self.selection.model},
            "classifier": [{"family": c.family,
                            "grid": {k: [none_to_str(v) for v in vs] for k, vs in sorted(c.grid.items())}}
                           for c in self.classifiers],
            "cv": {"scheme": self.cv.scheme, "folds": self.cv.folds, "repeats": self.cv.repeats,
                   "seed": self.cv.seed, "inner_folds": self.cv.inner_folds},
            "report": {"fpr": list(self.fpr_grid)},
        }


def _as_list(v):
    if v is None:
        return None
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _int_list(values, what):
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise DataError(f"{what}: grid values must be positive integers, got {v!r}")
        out.append(v)
    if not out:
        raise DataError(f"{what}: empty grid")
    return tuple(out)


def _coerce_param(v):
    return None if isinstance(v, str) and v.lower() == "none" else v


def _default_seed():
    env = os.environ.get("NEUROPIPE_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise DataError(f"NEUROPIPE_SEED must be an integer, got {env!r}") from None


def spec_from_dict(d: Mapping[str, Any]) -> ExperimentSpec:
    """Validate a key/value tree and fill defaults."""
    version = d.get("schema_version", SPEC_SCHEMA_VERSION)
    if version != SPEC_SCHEMA_VERSION:
        raise DataError(f"unsupported spec schema_version {version!r}")
    known = {"schema_version", "name", "task", "data", "reduction", "selection", "classifier", "cv", "report"}
    unknown = set(d) - known
    if unknown:
        raise DataError(f"unknown spec section(s) {sorted(unknown)}")
    if "task" not in d:
        raise DataError("spec is missing the [task] section")
    t = d["task"]
    if isinstance(t, str):
        t = {"name": t}
    if "name" not in t:
        raise DataError("task needs a name")
    task = get_task(t["name"], t.get("positive"), t.get("negative"))

    data = d.get("data", {})
    blocks = tuple(_as_list(data.get("blocks", data.get("block", "morphometry"))))
    if not blocks:
        raise DataError("data.blocks is empty")

    r = d.get("reduction", {})
    methods = tuple(_as_list(r.get("method", "none")))
    for m in methods:
        if m not in REDUCTION_METHODS:
            raise DataError(f"unknown reduction method {m!r}; available: {list(REDUCTION_METHODS)}")
    if not methods:
        raise DataError("reduction.method: empty grid")
    reduction = ReductionGrid(methods,
                              _int_list(_as_list(r.get("components", [5, 10, 15, 20])), "reduction.components"),
                              int(r.get("neighbors", 10)), float(r.get("regularizer", 1e-3)))

    s = d.get("selection", {})
    smethods = tuple(selection.canonical_method(m) for m in _as_list(s.get("method", "none")))
    if not smethods:
        raise DataError("selection.method: empty grid")
    model = s.get("model", "lr")
    if model not in selection.SELECTION_MODELS:
        raise DataError(f"unknown selection model {model!r}; available: {list(selection.SELECTION_MODELS)}")
    sel = SelectionGrid(smethods, _int_list(_as_list(s.get("k", [10, 20, 50, 100])), "selection.k"), model)

    raw = d.get("classifier")
    if raw is None:
        raise DataError("spec is missing the [classifier] section")
    raw = raw if isinstance(raw, list) else [raw]
    if not raw:
        raise DataError("classifier: empty grid")
    grids = []
    for c in raw:
        fam = c.get("family")
        if fam not in classify.FAMILIES:
            raise DataError(f"unknown classifier {fam!r}; registered classifiers: {list(classify.FAMILIES)}")
        g = {}
        for key, values in dict(c.get("grid", {})).items():
            vals = tuple(_coerce_param(v) for v in _as_list(values))
            if not vals:
                raise DataError(f"classifier {fam}: empty grid for {key}")
            g[key] = vals
        cg = ClassifierGrid(fam, g)
        cg.specs()  # validates every combination
        grids.append(cg)

    cv = d.get("cv", {})
    scheme = cv.get("scheme", "stratified_kfold")
    if scheme not in CV_SCHEMES:
        raise DataError(f"unknown cv scheme {scheme!r}; available: {list(CV_SCHEMES)}")
    plan = CVPlanSpec(scheme, int(cv.get("folds", 5)), int(cv.get("repeats", 10)),
                      int(cv.get("seed", _default_seed())), int(cv.get("inner_folds", 5)))
    if plan.folds < 2 or plan.inner_folds < 2 or plan.repeats < 1:
        raise DataError("cv.folds and cv.inner_folds must be >= 2 and cv.repeats >= 1")

    rep = d.get("report", {})
    fpr = tuple(float(x) for x in _as_list(rep.get("fpr", list(DEFAULT_FPR_GRID))))
    if not fpr or any(not 0 < x < 1 for x in fpr):
        raise DataError("report.fpr must be a non-empty list of rates in (0, 1)")

    name = d.get("name") or f"{task.name}-{'+'.join(blocks)}-{'+'.join(g.family for g in grids)}"
    return ExperimentSpec(str(name), task, blocks, tuple(grids), reduction, sel, plan, fpr)


def load_experiment_spec(path) -> ExperimentSpec:
    try:
        with open(path, "rb") as fh:
            d = tomli.load(fh)
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    except tomli.TOMLDecodeError as exc:
        raise ParseError(f"invalid TOML: {exc}", path) from None
    return spec_from_dict(d)


def dump_experiment_spec(spec: ExperimentSpec) -> str:
    return tomli_w.dumps(spec.to_dict())


def write_experiment_spec(spec: ExperimentSpec, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_experiment_spec(spec))
