"""Univariate (ANOVA F, chi-squared) and model-based feature selection.

Every scorer is a pure function of the training rows it is handed; the
returned indices are applied to held-out rows as a plain column projection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import classify
from .errors import DataError

log = logging.getLogger(__name__)

SELECTION_METHODS = ("none", "anova", "chi2", "model")
SELECTION_MODELS = ("lr", "knn", "rfc")
_ALIASES = {"anova-k": "anova", "anova_f": "anova", "chi2-k": "chi2", "model-based": "model"}


def canonical_method(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in SELECTION_METHODS:
        raise DataError(f"unknown selection method {name!r}; available: {list(SELECTION_METHODS)}")
    return name


@dataclass(frozen=True, eq=False)
class FeatureScores:
    scores: np.ndarray
    method: str

    def top_k(self, k: int) -> np.ndarray:
        return select_k_best(self.scores, k)


def _check(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError(f"shape mismatch: X {X.shape}, labels {y.shape}")
    if not (np.any(y == 0) and np.any(y == 1)):
        raise DataError("feature scoring needs both classes present")
    return X, y


def anova_f(X, y) -> FeatureScores:
    """Per-feature one-way ANOVA F statistic for two groups.

    A feature constant over all samples scores 0. A feature with zero
    within-group spread but distinct group means scores ``+inf``.
    """
    X, y = _check(X, y)
    n = X.shape[0]
    groups = [np.sort(X[y == c], axis=0) for c in (0, 1)]
    counts = [g.shape[0] for g in groups]
    sums = [g.sum(axis=0) for g in groups]
    means = [s / c for s, c in zip(sums, counts)]
    grand = (sums[0] + sums[1]) / n
    ssb = sum(c * (m - grand) ** 2 for c, m in zip(counts, means))
    ssw = sum(((g - m) ** 2).sum(axis=0) for g, m in zip(groups, means))
    sst = ((X - grand) ** 2).sum(axis=0)
    scale = np.abs(X).max(axis=0)
    df_b, df_w = 1, n - 2
    constant = sst <= n * (1e-12 * np.maximum(scale, 1e-300)) ** 2
    no_within = ssw <= 1e-12 * sst
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (ssb / df_b) / (ssw / df_w) if df_w > 0 else np.full_like(ssb, np.inf)
    f = np.where(no_within, np.inf, f)
    f = np.where(constant | (ssb <= 1e-13 * sst), 0.0, f)
    return FeatureScores(np.asarray(f, dtype=float), "anova_f")


@dataclass(frozen=True, eq=False)
class MinShift:
    """Per-feature offset making training columns non-negative."""

    offset: np.ndarray

    def apply(self, X):
        return np.asarray(X, dtype=float) - self.offset


def min_shift_fit(X) -> MinShift:
    X = np.asarray(X, dtype=float)
    return MinShift(np.minimum(X.min(axis=0), 0.0))


def chi2_scores(X, y, shift: bool = False) -> FeatureScores:
    """Chi-squared scores from per-class feature sums.

    Observed counts are the per-class column sums; expected counts split
    each column total by the class proportions.

    Parameters
    ----------
    shift : bool
        Subtract each column's (negative) training minimum first. Without
        it, negative inputs are a precondition error.
    """
    X, y = _check(X, y)
    if shift:
        X = min_shift_fit(X).apply(X)
    elif np.any(X < 0):
        raise DataError("chi2 scoring requires non-negative features (enable the min-shift)")
    n = X.shape[0]
    observed = np.vstack([X[y == c].sum(axis=0) for c in (0, 1)])
    total = X.sum(axis=0)
    class_frac = np.array([np.sum(y == c) / n for c in (0, 1)])
    expected = class_frac[:, None] * total[None, :]
    diff = observed - expected
    diff = np.where(np.abs(diff) <= 1e-12 * np.maximum(np.abs(observed), np.abs(expected)), 0.0, diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, diff ** 2 / expected, 0.0)
    return FeatureScores(terms.sum(axis=0), "chi2")


def select_k_best(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores.

    Ordered by descending score; equal scores (including several ``+inf``)
    go to the lower index first.
    """
    scores = np.asarray(scores, dtype=float)
    p = scores.shape[0]
    if not 1 <= k <= p:
        raise DataError(f"k={k} out of range for {p} features")
    if np.any(np.isnan(scores)):
        raise DataError("scores contain NaN")
    # lexsort: last key is primary
    order = np.lexsort((np.arange(p), -scores))
    return order[:k]


def model_importance(X, y, model_name: str, seed: int = 0) -> np.ndarray:
    if model_name not in SELECTION_MODELS:
        raise DataError(f"unsupported selection model {model_name!r}; available: {list(SELECTION_MODELS)}")
    if model_name == "knn":
        log.warning("knn has no feature importances; model-based selection falls back to anova_f")
        return anova_f(X, y).scores
    spec = classify.ClassifierSpec(model_name, seed=seed)
    model = classify.fit(spec, X, y)
    return model.feature_importance()


def model_based_select(X, y, model_name: str, k: int, seed: int = 0) -> np.ndarray:
    """Top-``k`` features by the importances of a model fitted on (X, y)."""
    X, y = _check(X, y)
    return select_k_best(model_importance(X, y, model_name, seed), k)
