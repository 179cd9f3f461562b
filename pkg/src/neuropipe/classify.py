"""Binary classifier families behind one fit / score / predict contract.

All families expose a continuous ``decision_score`` in [0, 1] whose larger
values mean "more positive": the sigmoid probability for logistic
regression, the positive vote fraction for KNN and the forests, and the
logistic link of the margin for the linear SVM.

Vote-based families (knn, rfc, etc) break a 0.5 vote tie toward label 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.special import expit

from .errors import DataError

FAMILIES = ("lr", "knn", "rfc", "etc", "linear_svm")

# family -> default hyper-parameters; keys double as the allowed names
DEFAULTS: dict[str, dict[str, Any]] = {
    "lr": {"lam": 1.0, "max_iter": 10000, "tol": 1e-6, "learning_rate": None},
    "knn": {"k": 5},
    "rfc": {"n_trees": 100, "max_depth": None, "min_leaf": 1, "max_features": "sqrt"},
    "etc": {"n_trees": 100, "max_depth": None, "min_leaf": 1, "max_features": "sqrt"},
    "linear_svm": {"C": 1.0, "epochs": 1000},
}

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ClassifierSpec:
    family: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in DEFAULTS:
            raise DataError(f"unknown classifier {self.family!r}; registered classifiers: {list(FAMILIES)}")
        unknown = set(self.params) - set(DEFAULTS[self.family])
        if unknown:
            raise DataError(f"{self.family}: unknown parameter(s) {sorted(unknown)}; "
                            f"allowed: {sorted(DEFAULTS[self.family])}")
        merged = dict(DEFAULTS[self.family])
        merged.update(self.params)
        _check_params(self.family, merged)
        object.__setattr__(self, "params", merged)
        if self.seed is None:
            raise DataError("classifier seed is mandatory")

    def with_seed(self, seed: int) -> "ClassifierSpec":
        return ClassifierSpec(self.family, dict(self.params), int(seed))

    def label(self) -> str:
        explicit = {k: v for k, v in self.params.items() if DEFAULTS[self.family][k] != v}
        inner = ",".join(f"{k}={explicit[k]}" for k in sorted(explicit))
        return f"{self.family}({inner})"


def _check_params(family, p):
    def positive(name, integer=False):
        v = p[name]
        if integer and (not isinstance(v, (int, np.integer)) or isinstance(v, bool)):
            raise DataError(f"{family}: {name} must be an integer, got {v!r}")
        if v <= 0:
            raise DataError(f"{family}: {name} must be positive, got {v!r}")

    if family == "lr":
        if p["lam"] < 0:
            raise DataError(f"lr: lam must be non-negative, got {p['lam']!r}")
        positive("max_iter", integer=True)
        positive("tol")
        if p["learning_rate"] is not None:
            positive("learning_rate")
    elif family == "knn":
        positive("k", integer=True)
    elif family in ("rfc", "etc"):
        positive("n_trees", integer=True)
        positive("min_leaf", integer=True)
        if p["max_depth"] is not None:
            positive("max_depth", integer=True)
        mf = p["max_features"]
        if not (mf in ("sqrt", "all") or (isinstance(mf, (int, np.integer)) and mf > 0)):
            raise DataError(f"{family}: max_features must be 'sqrt', 'all' or a positive int, got {mf!r}")
    elif family == "linear_svm":
        positive("C")
        positive("epochs", integer=True)


def _check_training(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[1] < 1:
        raise DataError(f"training matrix must be 2-D with at least one feature, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise DataError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if not np.all(np.isfinite(X)):
        raise DataError("training matrix contains NaN or Inf")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be binary 0/1")
    if np.all(y == y[0]):
        raise DataError("single-class training set")
    return X, y.astype(int)


class FittedClassifier:
    family: str
    n_features: int

    def _check_rows(self, rows):
        rows = np.asarray(rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[None, :]
        if rows.shape[1] != self.n_features:
            raise DataError(f"row width {rows.shape[1]} does not match training width {self.n_features}")
        return rows

    def decision_score(self, rows) -> np.ndarray:
        raise NotImplementedError

    def predict(self, rows) -> np.ndarray:
        return (self.decision_score(rows) >= 0.5).astype(int)

    def feature_importance(self):
        return None

    def to_dict(self) -> dict:
        raise NotImplementedError


# ---------------------------------------------------------------- logistic


def lr_objective(w, b, X, y, lam):
    """Mean log-loss plus ``lam / (2 n) * ||w||^2``."""
    n = X.shape[0]
    z = X @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + lam / (2 * n) * (w @ w))


def lr_gradient(w, b, X, y, lam):
    n = X.shape[0]
    r = expit(X @ w + b) - y
    return X.T @ r / n + lam / n * w, float(np.mean(r))


class LogisticRegressionModel(FittedClassifier):
    family = "lr"

    def __init__(self, weights, bias, scale, n_iter=0, converged=True):
        self.weights = np.asarray(weights, dtype=float)
        self.bias = float(bias)
        self.scale = np.asarray(scale, dtype=float)
        self.n_features = self.weights.shape[0]
        self.n_iter = int(n_iter)
        self.converged = bool(converged)

    @classmethod
    def fit(cls, X, y, lam=1.0, max_iter=10000, tol=1e-6, learning_rate=None):
        n, p = X.shape
        yf = y.astype(float)
        if learning_rate is None:
            # 1/L for the smooth objective: L = s_max([X 1])^2 / (4n) + lam / n
            s = np.linalg.norm(np.hstack([X, np.ones((n, 1))]), 2)
            learning_rate = 1.0 / (s * s / (4 * n) + lam / n)
        w = np.zeros(p)
        b = 0.0
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            gw, gb = lr_gradient(w, b, X, yf, lam)
            if math.sqrt(gw @ gw + gb * gb) < tol:
                converged = True
                break
            w = w - learning_rate * gw
            b = b - learning_rate * gb
        return cls(w, b, X.std(axis=0), n_iter=it, converged=converged)

    def decision_score(self, rows):
        rows = self._check_rows(rows)
        return expit(rows @ self.weights + self.bias)

    def feature_importance(self):
        # |w| in units of one training standard deviation per feature
        return np.abs(self.weights) * self.scale

    def to_dict(self):
        return {"family": self.family, "weights": self.weights.tolist(), "bias": self.bias,
                "scale": self.scale.tolist(), "n_iter": self.n_iter, "converged": self.converged}

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["bias"], d["scale"], d["n_iter"], d["converged"])


# --------------------------------------------------------------------- knn


class KNNModel(FittedClassifier):
    family = "knn"

    def __init__(self, X, y, k):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=int)
        self.k = int(k)
        self.n_features = self.X.shape[1]

    @classmethod
    def fit(cls, X, y, k=5):
        if k > X.shape[0]:
            raise DataError(f"knn: k={k} exceeds {X.shape[0]} training rows")
        return cls(X.copy(), y.copy(), k)

    def neighbors(self, rows):
        rows = self._check_rows(rows)
        d = ((rows[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)
        # distance ties resolved by lower training index
        return np.argsort(d, axis=1, kind="stable")[:, : self.k]

    def decision_score(self, rows):
        return self.y[self.neighbors(rows)].mean(axis=1)

    def predict(self, rows):
        return (self.decision_score(rows) > 0.5).astype(int)

    def to_dict(self):
        return {"family": self.family, "X": self.X.tolist(), "y": self.y.tolist(), "k": self.k}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["X"], dtype=float).reshape(len(d["y"]), -1), d["y"], d["k"])


# ----------------------------------------------------------------- forests


def _gini_best_split(x, y, min_leaf):
    """Best midpoint threshold on one feature by weighted Gini decrease.

    Returns (decrease, threshold) or None when no admissible split exists.
    ``decrease`` is in sample-count units: n*G(node) - n_l*G(l) - n_r*G(r).
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    n = xs.shape[0]
    pos_left = np.cumsum(ys)[:-1]
    n_left = np.arange(1, n)
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not np.any(valid):
        return None
    total_pos = ys.sum()
    n_right = n - n_left
    pos_right = total_pos - pos_left
    # n*G = n - (pos^2 + neg^2)/n, so the decrease only needs the squared sums
    left_term = (pos_left ** 2 + (n_left - pos_left) ** 2) / n_left
    right_term = (pos_right ** 2 + (n_right - pos_right) ** 2) / n_right
    parent_term = (total_pos ** 2 + (n - total_pos) ** 2) / n
    gain = np.where(valid, left_term + right_term - parent_term, -np.inf)
    i = int(np.argmax(gain))
    return float(gain[i]), float((xs[i] + xs[i + 1]) / 2.0)


def _split_gain(x, y, threshold, min_leaf):
    left = x <= threshold
    n_l = int(left.sum())
    n = x.shape[0]
    n_r = n - n_l
    if n_l < min_leaf or n_r < min_leaf or n_l == 0 or n_r == 0:
        return None
    p_l = float(y[left].sum())
    p_t = float(y.sum())
    p_r = p_t - p_l
    gain = ((p_l ** 2 + (n_l - p_l) ** 2) / n_l + (p_r ** 2 + (n_r - p_r) ** 2) / n_r
            - (p_t ** 2 + (n - p_t) ** 2) / n)
    return gain


class _Tree:
    """Array-backed binary tree; leaves have feature == -1."""

    def __init__(self, feature, threshold, left, right, value, importance):
        self.feature = np.asarray(feature, dtype=int)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=int)
        self.right = np.asarray(right, dtype=int)
        self.value = np.asarray(value, dtype=int)
        self.importance = np.asarray(importance, dtype=float)

    def apply(self, rows):
        node = np.zeros(rows.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while np.any(active):
            idx = np.nonzero(active)[0]
            f = self.feature[node[idx]]
            go_left = rows[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return node

    def predict(self, rows):
        return self.value[self.apply(rows)]

    def to_dict(self):
        return {k: getattr(self, k).tolist()
                for k in ("feature", "threshold", "left", "right", "value", "importance")}

    @classmethod
    def from_dict(cls, d):
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"], d["importance"])


def _grow_tree(X, y, rng, n_try, max_depth, min_leaf, random_thresholds):
    n, p = X.shape
    feature, threshold, left, right, value = [], [], [], [], []
    importance = np.zeros(p)

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        pos = int(y[idx].sum())
        value.append(1 if 2 * pos > idx.shape[0] else 0)
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yi = y[idx]
        if yi.min() == yi.max():
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        if idx.shape[0] < 2 * min_leaf:
            continue
        Xi = X[idx]
        best = None
        tried = 0
        # visit features in random order until n_try non-constant ones were scored
        for f in rng.permutation(p):
            col = Xi[:, f]
            lo, hi = col.min(), col.max()
            if lo == hi:
                continue
            tried += 1
            if random_thresholds:
                t = float(rng.uniform(lo, hi))
                gain = _split_gain(col, yi, t, min_leaf)
                cand = None if gain is None else (gain, t)
            else:
                cand = _gini_best_split(col, yi, min_leaf)
            if cand is not None and (best is None or cand[0] > best[0]):
                best = (cand[0], cand[1], int(f))
            if tried >= n_try and best is not None:
                break
        if best is None:
            continue
        gain, t, f = best
        importance[f] += gain
        go_left = X[idx, f] <= t
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = t
        lnode = new_node(li)
        rnode = new_node(ri)
        left[node] = lnode
        right[node] = rnode
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))
    return _Tree(feature, threshold, left, right, value, importance)


def tree_rng(seed, tree_index):
    """Counter-based generator keyed by (seed, tree index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(tree_index)])))


class ForestModel(FittedClassifier):
    """Random forest (bootstrap, best split on random features) or extra trees
    (full sample, random thresholds)."""

    def __init__(self, family, trees, n_features, in_bag=None):
        self.family = family
        self.trees = list(trees)
        self.n_features = int(n_features)
        self.in_bag = in_bag

    @classmethod
    def fit(cls, X, y, family="rfc", seed=0, n_trees=100, max_depth=None, min_leaf=1,
            max_features="sqrt"):
        n, p = X.shape
        if max_features == "sqrt":
            n_try = max(1, int(math.sqrt(p)))
        elif max_features == "all":
            n_try = p
        else:
            n_try = min(int(max_features), p)
        trees, in_bag = [], []
        for t in range(n_trees):
            rng = tree_rng(seed, t)
            if family == "rfc":
                sample = rng.integers(0, n, n)
            else:
                sample = np.arange(n)
            tree = _grow_tree(X[sample], y[sample], rng, n_try, max_depth, min_leaf,
                              random_thresholds=(family == "etc"))
            trees.append(tree)
            in_bag.append(sample)
        return cls(family, trees, p, in_bag)

    def tree_votes(self, rows):
        rows = self._check_rows(rows)
        return np.vstack([t.predict(rows) for t in self.trees])

    def decision_score(self, rows):
        return self.tree_votes(rows).mean(axis=0)

    def predict(self, rows):
        return (self.decision_score(rows) > 0.5).astype(int)

    def feature_importance(self):
        """Mean impurity decrease, normalized per tree and over the forest."""
        acc = np.zeros(self.n_features)
        for t in self.trees:
            total = t.importance.sum()
            if total > 0:
                acc += t.importance / total
        total = acc.sum()
        return acc / total if total > 0 else acc

    def to_dict(self):
        return {"family": self.family, "n_features": self.n_features,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], [_Tree.from_dict(t) for t in d["trees"]], d["n_features"])


# ---------------------------------------------------------------------- svm


class LinearSVMModel(FittedClassifier):
    family = "linear_svm"

    def __init__(self, weights, bias, scale):
        self.weights = np.asarray(weights, dtype=float)
        self.bias = float(bias)
        self.scale = np.asarray(scale, dtype=float)
        self.n_features = self.weights.shape[0]

    @staticmethod
    def objective(w, b, X, s, lam):
        margins = 1.0 - s * (X @ w + b)
        return 0.5 * lam * (w @ w) + np.mean(np.maximum(0.0, margins))

    @classmethod
    def fit(cls, X, y, C=1.0, epochs=1000):
        # full-batch subgradient descent, step min(1/(lam t), 1/(1 + max |x|^2));
        # the best iterate is kept
        n, p = X.shape
        s = 2.0 * y - 1.0
        lam = 1.0 / (C * n)
        cap = 1.0 / (1.0 + float((X ** 2).sum(axis=1).max()))
        w = np.zeros(p)
        b = 0.0
        best = (cls.objective(w, b, X, s, lam), w, b)
        for t in range(1, epochs + 1):
            active = s * (X @ w + b) < 1.0
            gw = lam * w - (s[active, None] * X[active]).sum(axis=0) / n
            gb = -s[active].sum() / n
            eta = min(1.0 / (lam * t), cap)
            w = w - eta * gw
            b = b - eta * gb
            obj = cls.objective(w, b, X, s, lam)
            if obj < best[0]:
                best = (obj, w, b)
        return cls(best[1], best[2], X.std(axis=0))

    def margin(self, rows):
        rows = self._check_rows(rows)
        return rows @ self.weights + self.bias

    def decision_score(self, rows):
        return expit(self.margin(rows))

    def predict(self, rows):
        return (self.margin(rows) >= 0.0).astype(int)

    def feature_importance(self):
        return np.abs(self.weights) * self.scale

    def to_dict(self):
        return {"family": self.family, "weights": self.weights.tolist(), "bias": self.bias,
                "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["bias"], d["scale"])


# ------------------------------------------------------------------ facade


def fit(spec: ClassifierSpec, X, y, seed=None) -> FittedClassifier:
    """Fit ``spec`` on (X, y). Deterministic in (spec, data, seed)."""
    X, y = _check_training(X, y)
    seed = spec.seed if seed is None else int(seed)
    p = dict(spec.params)
    if spec.family == "lr":
        return LogisticRegressionModel.fit(X, y, **p)
    if spec.family == "knn":
        return KNNModel.fit(X, y, **p)
    if spec.family in ("rfc", "etc"):
        return ForestModel.fit(X, y, family=spec.family, seed=seed, **p)
    return LinearSVMModel.fit(X, y, **p)


def predict(model: FittedClassifier, rows):
    return model.predict(rows)


def decision_score(model: FittedClassifier, rows):
    return model.decision_score(rows)


def feature_importance(model: FittedClassifier):
    """Importance vector, or None for families without one (knn)."""
    return model.feature_importance()


_LOADERS = {
    "lr": LogisticRegressionModel.from_dict,
    "knn": KNNModel.from_dict,
    "rfc": ForestModel.from_dict,
    "etc": ForestModel.from_dict,
    "linear_svm": LinearSVMModel.from_dict,
}


def save_model(model: FittedClassifier, path):
    payload = {"schema_version": MODEL_SCHEMA_VERSION, "model": model.to_dict()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_model(path) -> FittedClassifier:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise DataError(f"unsupported model schema version {payload.get('schema_version')!r}")
    d = payload["model"]
    if d.get("family") not in _LOADERS:
        raise DataError(f"unknown model family {d.get('family')!r}")
    return _LOADERS[d["family"]](d)
