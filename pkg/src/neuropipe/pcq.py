"""Personal Classification Quality table and the per-subject statistics built on it.

For every (subject, experiment) pair the table stores whether the subject
took part, in how many CV test splits it appeared, and how many of those
decisions went to class CS1 (label 1) and CS2 (label 0).

Averaged rates use the total participation count as denominator::

    rate(cs, k) = sum_ID N_CV,ID,CSk / sum_ID N_CV,ID      over ID with class cs

so ``rate(1, 1)`` is the true-positive rate and ``rate(0, 1)`` the
false-positive rate of the experiment.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .cohort import Cohort
from .cv_engine import DecisionLog, DecisionRow
from .errors import DataError
from .ingest import format_number

RATE_NOTE = ("TP/FP rates are pooled decision counts divided by the total number of "
             "CV participations of the subjects in each class.")


@dataclass(frozen=True)
class PCQCell:
    participates: int
    n_cv: int
    n_cs1: int
    n_cs2: int
    true_class: int | None


EMPTY_CELL = PCQCell(0, 0, 0, 0, None)


@dataclass
class PCQTable:
    subject_ids: tuple[str, ...]
    status: Mapping[str, str]
    covariates: Mapping[str, Mapping[str, float | str]]
    experiments: tuple[str, ...]
    cells: Mapping[tuple[str, str], PCQCell]

    def cell(self, sid: str, mle: str) -> PCQCell:
        if mle not in self.experiments:
            raise DataError(f"unknown experiment {mle!r}; table has {list(self.experiments)}")
        return self.cells.get((sid, mle), EMPTY_CELL)

    def covariate_names(self) -> list[str]:
        return sorted({k for c in self.covariates.values() for k in c})

    def to_csv(self, path):
        covs = self.covariate_names()
        header = ["id", "status", *covs]
        for mle in self.experiments:
            header += [f"{mle}:I", f"{mle}:N_CV", f"{mle}:N_CV_CS1", f"{mle}:N_CV_CS2", f"{mle}:class"]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for sid in self.subject_ids:
                row = [sid, self.status.get(sid, "")]
                for name in covs:
                    v = self.covariates.get(sid, {}).get(name)
                    row.append("" if v is None else (format_number(v) if isinstance(v, float) else v))
                for mle in self.experiments:
                    c = self.cell(sid, mle)
                    row += [c.participates, c.n_cv, c.n_cs1, c.n_cs2,
                            "" if c.true_class is None else c.true_class]
                w.writerow(row)


def build_pcq(logs: Sequence[DecisionLog], cohort: Cohort | None = None) -> PCQTable:
    """Tally participation and decision counts per (subject, experiment).

    With a cohort, every cohort subject gets a row (absent ones with I=0) and
    log rows for unknown subjects are an error.
    """
    names = [log.mle for log in logs]
    if len(set(names)) != len(names):
        raise DataError(f"duplicate experiment ids among logs: {names}")
    if cohort is not None:
        known = {s.id: s for s in cohort.subjects}
        status = {sid: s.status for sid, s in known.items()}
        covariates = {sid: dict(s.covariates) for sid, s in known.items()}
    else:
        known = None
        status, covariates = {}, {}
    tallies: dict[tuple[str, str], list] = {}
    for log in logs:
        for r in log.rows:
            if known is not None and r.subject_id not in known:
                raise DataError(f"log {log.mle}: unknown subject id {r.subject_id!r}")
            t = tallies.setdefault((r.subject_id, log.mle), [0, 0, 0, r.true_status])
            if t[3] != r.true_status:
                raise DataError(f"log {log.mle}: subject {r.subject_id!r} has inconsistent true class")
            t[0] += 1
            if r.predicted == 1:
                t[1] += 1
            else:
                t[2] += 1
    cells = {key: PCQCell(1, n, a, b, cls) for key, (n, a, b, cls) in tallies.items()}
    ids = set(status) | {sid for sid, _ in tallies}
    return PCQTable(tuple(sorted(ids)), status, covariates, tuple(names), cells)


def _participants(table, mle, true_class):
    out = []
    for sid in table.subject_ids:
        c = table.cell(sid, mle)
        if c.participates and c.true_class == true_class and c.n_cv > 0:
            out.append((sid, c))
    return out


def rate(table: PCQTable, mle: str, true_class: int, decided_class: int) -> float:
    """Share of CV decisions equal to ``decided_class`` among subjects of ``true_class``.

    Classes are task labels: 1 is CS1 (positive), 0 is CS2. The
    true-positive rate is ``rate(t, mle, 1, 1)``, the false-positive rate
    ``rate(t, mle, 0, 1)``.
    """
    members = _participants(table, mle, true_class)
    if not members:
        raise DataError(f"{mle}: no participating subjects of class {true_class}")
    num = sum(c.n_cs1 if decided_class == 1 else c.n_cs2 for _, c in members)
    den = sum(c.n_cv for _, c in members)
    return num / den


def tp_rate(table, mle):
    return rate(table, mle, 1, 1)


def fp_rate(table, mle):
    return rate(table, mle, 0, 1)


@dataclass(frozen=True, eq=False)
class SubjectFrequencySet:
    mle: str
    subject_ids: tuple[str, ...]
    frequencies: np.ndarray
    successes: np.ndarray
    n_cv: np.ndarray

    @property
    def size(self) -> int:
        return len(self.subject_ids)


def subject_frequencies(table: PCQTable, mle: str) -> SubjectFrequencySet:
    """Per-subject fraction of CS1 decisions for participating CS1 subjects."""
    members = _participants(table, mle, 1)
    if not members:
        raise DataError(f"{mle}: no participating CS1 subjects")
    succ = np.array([c.n_cs1 for _, c in members], dtype=int)
    n = np.array([c.n_cv for _, c in members], dtype=int)
    return SubjectFrequencySet(mle, tuple(s for s, _ in members), succ / n, succ, n)


@dataclass(frozen=True)
class HomogeneityResult:
    homogeneous: bool
    statistic: float
    p_value: float
    df: int

    @property
    def verdict(self) -> str:
        return "homogeneous" if self.homogeneous else "heterogeneous"


def homogeneity_test(freqs: SubjectFrequencySet, alpha: float = 0.05) -> HomogeneityResult:
    """Chi-squared test that all subjects share the pooled success rate."""
    if int(np.sum(freqs.n_cv >= 2)) < 2:
        raise DataError("insufficient data: need at least two subjects with N_CV >= 2")
    s = freqs.successes.astype(float)
    n = freqs.n_cv.astype(float)
    pooled = s.sum() / n.sum()
    df = len(s) - 1
    if pooled in (0.0, 1.0):
        return HomogeneityResult(True, 0.0, 1.0, df)
    e1 = n * pooled
    e0 = n * (1 - pooled)
    statistic = float(np.sum((s - e1) ** 2 / e1 + ((n - s) - e0) ** 2 / e0))
    p = float(stats.chi2.sf(statistic, df))
    return HomogeneityResult(p >= alpha, statistic, p, df)


@dataclass(frozen=True)
class ClusterAssignment:
    labels: Mapping[str, int]
    centers: tuple[float, ...]
    empty: tuple[bool, ...]
    silhouette: float | None

    def members(self, cluster: int) -> list[str]:
        return sorted(s for s, c in self.labels.items() if c == cluster)


def _kmeans_1d(x, n_clusters, max_iter=100):
    centers = np.quantile(x, (np.arange(n_clusters) + 0.5) / n_clusters)
    labels = np.full(len(x), -1)
    for _ in range(max_iter):
        # argmin returns the first minimum: ties go to the lower cluster
        new = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        for c in range(n_clusters):
            if np.any(new == c):
                continue
            # re-seed an empty cluster at the worst-fitted point, if any differs from its centre
            gap = np.abs(x - centers[new])
            j = int(np.argmax(gap))
            if gap[j] > 0:
                centers[c] = x[j]
                new[j] = c
        for c in range(n_clusters):
            if np.any(new == c):
                centers[c] = x[new == c].mean()
        if np.array_equal(new, labels):
            break
        labels = new
    return labels, centers


def _silhouette_1d(x, labels):
    groups = sorted(set(labels.tolist()))
    if len(groups) < 2:
        return None
    scores = []
    for i in range(len(x)):
        own = labels == labels[i]
        if own.sum() == 1:
            scores.append(0.0)
            continue
        a = np.abs(x[own] - x[i]).sum() / (own.sum() - 1)
        b = min(np.abs(x[labels == g] - x[i]).mean() for g in groups if g != labels[i])
        scores.append(0.0 if max(a, b) == 0 else (b - a) / max(a, b))
    return float(np.mean(scores))


def cluster_subjects(freqs: SubjectFrequencySet, n_clusters: int, force: bool = False,
                     alpha: float = 0.05) -> ClusterAssignment:
    """1-D k-means of subject frequencies with quantile-seeded centres.

    Clusters are numbered by ascending centre. Unless ``force`` is set, the
    frequencies must first fail :func:`homogeneity_test`.
    """
    if n_clusters < 1 or n_clusters > freqs.size:
        raise DataError(f"n_clusters={n_clusters} must be in [1, {freqs.size}]")
    if not force and homogeneity_test(freqs, alpha).homogeneous:
        raise DataError("frequencies are homogeneous; pass force=True to cluster anyway")
    x = np.asarray(freqs.frequencies, dtype=float)
    labels, centers = _kmeans_1d(x, n_clusters)
    order = np.argsort(centers, kind="stable")
    remap = np.empty_like(order)
    remap[order] = np.arange(n_clusters)
    labels = remap[labels]
    centers = centers[order]
    empty = tuple(not np.any(labels == c) for c in range(n_clusters))
    return ClusterAssignment(dict(zip(freqs.subject_ids, labels.tolist())),
                             tuple(float(c) for c in centers), empty, _silhouette_1d(x, labels))


@dataclass(frozen=True)
class CovariateResult:
    name: str
    kind: str
    test: str | None
    statistic: float | None
    p_value: float
    skipped: str | None = None


def covariate_association(clusters: ClusterAssignment, cohort: Cohort) -> list[CovariateResult]:
    """Test each clinical covariate for differences across clusters.

    Numeric covariates: exact Mann-Whitney U for two clusters (asymptotic
    with ties), Kruskal-Wallis otherwise. Categorical: chi-squared
    contingency without continuity correction. Subjects missing a covariate
    are left out of that covariate's test.
    """
    covs = {s.id: s.covariates for s in cohort.subjects}
    names = sorted({k for sid in clusters.labels for k in covs.get(sid, {})})
    results = []
    for name in names:
        pairs = [(clusters.labels[sid], covs[sid][name]) for sid in sorted(clusters.labels)
                 if name in covs.get(sid, {})]
        numeric = all(isinstance(v, (int, float)) for _, v in pairs)
        kind = "numeric" if numeric else "categorical"
        groups = sorted({c for c, _ in pairs})
        values = {v for _, v in pairs}
        if len(groups) < 2:
            results.append(CovariateResult(name, kind, None, None, 1.0, "fewer than two clusters"))
            continue
        if len(values) < 2:
            results.append(CovariateResult(name, kind, None, None, 1.0, "constant covariate"))
            continue
        if numeric:
            samples = [np.array([v for c, v in pairs if c == g], dtype=float) for g in groups]
            if len(samples) == 2:
                allv = np.concatenate(samples)
                method = "exact" if len(np.unique(allv)) == len(allv) else "asymptotic"
                res = stats.mannwhitneyu(samples[0], samples[1], alternative="two-sided", method=method)
                results.append(CovariateResult(name, kind, f"mann_whitney_{method}",
                                               float(res.statistic), float(res.pvalue)))
            else:
                res = stats.kruskal(*samples)
                results.append(CovariateResult(name, kind, "kruskal", float(res.statistic), float(res.pvalue)))
        else:
            cats = sorted({str(v) for _, v in pairs})
            table = np.zeros((len(groups), len(cats)))
            for c, v in pairs:
                table[groups.index(c), cats.index(str(v))] += 1
            chi2, p, _, _ = stats.chi2_contingency(table, correction=False)
            results.append(CovariateResult(name, kind, "chi2_contingency", float(chi2), float(p)))
    return results


def majority_ensemble(logs: Sequence[DecisionLog], weights: Sequence[float] | None = None,
                      mle: str = "ensemble") -> DecisionLog:
    """Weighted vote of member decisions per (subject, repeat).

    Only (subject, repeat) keys present in every member are kept. A tied
    vote goes to class 0; the score is the weighted mean member score.
    """
    if len(logs) < 2:
        raise DataError("ensemble needs at least two member logs")
    if weights is None:
        weights = [1.0] * len(logs)
    if len(weights) != len(logs) or any(w < 0 for w in weights) or sum(weights) <= 0:
        raise DataError("weights must be non-negative, one per log, with a positive sum")
    keyed = [{(r.subject_id, r.repeat): r for r in log.rows} for log in logs]
    common = set(keyed[0])
    for k in keyed[1:]:
        common &= set(k)
    if not common:
        raise DataError("member logs share no (subject, repeat) decisions")
    total = float(sum(weights))
    rows = []
    for key in sorted(common):
        members = [k[key] for k in keyed]
        truth = {m.true_status for m in members}
        if len(truth) != 1:
            raise DataError(f"members disagree on the true class of {key[0]!r}")
        vote = sum(w * m.predicted for w, m in zip(weights, members))
        score = sum(w * m.score for w, m in zip(weights, members)) / total
        rows.append(DecisionRow(members[0].repeat, members[0].fold, key[0], members[0].true_status,
                                int(vote > total / 2.0), float(score), "ensemble"))
    return DecisionLog(mle, sorted(rows))
