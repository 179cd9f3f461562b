"""Synthetic cohorts with known ground truth.

Tabular blocks are unit Gaussians with a class-mean shift of ``delta`` on
``s`` planted features. Connectivity matrices follow a two-block weighted
stochastic block model whose intra/inter edge probabilities and weight
means depend on the class.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import tomli

from .cohort import Cohort, ConnectivityMatrix, FeatureMatrix, SubjectRecord
from .errors import DataError
from .ingest import _default_seed


@dataclass(frozen=True)
class SynthSpec:
    n_pos: int = 50
    n_neg: int = 50
    p: int = 100
    s: int = 10
    delta: float = 1.0
    seed: int = 0
    positive_status: str = "E"
    negative_status: str = "H"
    # connectivity; n_rois = 0 disables it. Pairs are (positive, negative).
    n_rois: int = 0
    p_intra: tuple[float, float] = (0.8, 0.8)
    p_inter: tuple[float, float] = (0.3, 0.3)
    w_intra: tuple[float, float] = (0.7, 0.3)
    w_inter: tuple[float, float] = (0.3, 0.3)
    w_sd: float = 0.1
    directed: bool = False
    covariates: bool = True

    def __post_init__(self):
        for name in ("p_intra", "p_inter", "w_intra", "w_inter"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2:
                raise DataError(f"{name} needs one value per class, got {v}")
            if name.startswith("p_") and not all(0 <= x <= 1 for x in v):
                raise DataError(f"{name} probabilities must lie in [0, 1], got {v}")
            object.__setattr__(self, name, v)
        if self.n_pos < 1 or self.n_neg < 1:
            raise DataError("need at least one subject per class")
        if self.p < 0 or not 0 <= self.s <= self.p:
            raise DataError(f"need 0 <= s <= p, got s={self.s}, p={self.p}")
        if self.delta < 0:
            raise DataError(f"delta must be >= 0, got {self.delta}")
        if self.w_sd < 0 or self.n_rois < 0 or self.n_rois == 1:
            raise DataError("w_sd must be >= 0 and n_rois either 0 or >= 2")
        if self.p == 0 and self.n_rois == 0:
            raise DataError("spec generates neither features nor connectivity")

    @property
    def n(self):
        return self.n_pos + self.n_neg

    def with_seed(self, seed: int) -> "SynthSpec":
        return replace(self, seed=int(seed))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SynthCohort:
    cohort: Cohort
    labels: dict[str, int]
    planted: tuple[int, ...]
    planted_names: tuple[str, ...] = field(default=())


def _labels(spec: SynthSpec):
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    y = np.array([1] * spec.n_pos + [0] * spec.n_neg)
    return y[rng.permutation(spec.n)]


def subject_ids(spec: SynthSpec) -> list[str]:
    width = max(3, len(str(spec.n)))
    return [f"S{i + 1:0{width}d}" for i in range(spec.n)]


def _subjects(spec: SynthSpec, y):
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 3]))
    out = []
    for sid, lab in zip(subject_ids(spec), y):
        cov = {}
        if spec.covariates:
            # independent of class by construction
            cov = {"age": float(np.round(rng.normal(40.0, 12.0), 1)),
                   "sex": "F" if rng.random() < 0.5 else "M"}
        out.append(SubjectRecord(sid, spec.positive_status if lab == 1 else spec.negative_status, cov))
    return tuple(out)


def planted_features(spec: SynthSpec) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    return np.sort(rng.choice(spec.p, size=spec.s, replace=False)) if spec.s else np.zeros(0, int)


def feature_names(p: int) -> tuple[str, ...]:
    width = max(4, len(str(p)))
    return tuple(f"f{j:0{width}d}" for j in range(p))


def tabular_block(spec: SynthSpec, y) -> FeatureMatrix:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 2]))
    X = rng.standard_normal((spec.n, spec.p))
    planted = planted_features(spec)
    X[np.ix_(y == 1, planted)] += spec.delta
    return FeatureMatrix(subject_ids(spec), feature_names(spec.p), X, "morphometry",
                         {"generator": "synth.gaussian", "seed": str(spec.seed)})


def generate_tabular(spec: SynthSpec) -> SynthCohort:
    """Cohort with one ``morphometry`` block and the planted indices recorded."""
    if spec.p == 0:
        raise DataError("tabular generation needs p >= 1")
    y = _labels(spec)
    block = tabular_block(spec, y)
    planted = planted_features(spec)
    cohort = Cohort(_subjects(spec, y), {"morphometry": block})
    return SynthCohort(cohort, dict(zip(subject_ids(spec), y.tolist())), tuple(planted.tolist()),
                       tuple(block.feature_names[j] for j in planted))


def roi_names(n_rois: int) -> tuple[str, ...]:
    return tuple(f"roi{j:03d}" for j in range(n_rois))


def connectivity_matrix(spec: SynthSpec, label: int, rng) -> ConnectivityMatrix:
    """One subject's weighted two-block SBM; block membership by ROI halves."""
    n = spec.n_rois
    c = 0 if label == 1 else 1
    block = np.arange(n) >= n // 2
    same = block[:, None] == block[None, :]
    prob = np.where(same, spec.p_intra[c], spec.p_inter[c])
    mean = np.where(same, spec.w_intra[c], spec.w_inter[c])
    present = rng.random((n, n)) < prob
    w = np.clip(mean + spec.w_sd * rng.standard_normal((n, n)), 0.0, 1.0) * present
    if not spec.directed:
        w = np.triu(w, 1)
        w = w + w.T
    np.fill_diagonal(w, 0.0)
    return ConnectivityMatrix(roi_names(n), w, spec.directed)


def generate_connectivity(spec: SynthSpec, labels=None) -> dict[str, ConnectivityMatrix]:
    """Per-subject matrices, each drawn from its own derived RNG stream."""
    if spec.n_rois < 2:
        raise DataError("connectivity generation needs n_rois >= 2")
    y = _labels(spec) if labels is None else np.asarray(labels)
    out = {}
    for i, (sid, lab) in enumerate(zip(subject_ids(spec), y)):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 4, i]))
        out[sid] = connectivity_matrix(spec, int(lab), rng)
    return out


def generate(spec: SynthSpec) -> SynthCohort:
    """Full cohort: tabular block when p > 0, connectivity when n_rois > 0."""
    y = _labels(spec)
    blocks, planted, names = {}, (), ()
    if spec.p:
        block = tabular_block(spec, y)
        blocks["morphometry"] = block
        planted = tuple(planted_features(spec).tolist())
        names = tuple(block.feature_names[j] for j in planted)
    conn = generate_connectivity(spec, y) if spec.n_rois else {}
    cohort = Cohort(_subjects(spec, y), blocks, conn)
    return SynthCohort(cohort, dict(zip(subject_ids(spec), y.tolist())), planted, names)


_SPEC_FIELDS = set(SynthSpec.__dataclass_fields__)


def spec_from_dict(d) -> SynthSpec:
    flat = {}
    for key, value in d.items():
        if isinstance(value, dict):  # [tabular] / [connectivity] tables
            flat.update(value)
        else:
            flat[key] = value
    unknown = sorted(set(flat) - _SPEC_FIELDS)
    if unknown:
        raise DataError(f"unknown synth spec keys: {unknown}")
    if "seed" not in flat:
        flat["seed"] = _default_seed()
    for key in ("p_intra", "p_inter", "w_intra", "w_inter"):
        if key in flat and not isinstance(flat[key], (list, tuple)):
            flat[key] = (flat[key], flat[key])
    return SynthSpec(**flat)


def load_synth_spec(path) -> SynthSpec:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            d = tomli.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot read synth spec: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return spec_from_dict(d)
