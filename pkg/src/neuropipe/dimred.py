"""Whitening, PCA and locally linear embedding, each fitted on training rows only."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .errors import DataError

STD_FLOOR = 1e-12


def _as_array(rows):
    values = getattr(rows, "values", rows)
    return np.asarray(values, dtype=float)


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _fix_signs(vectors, axis):
    """Flip each vector so its largest-magnitude entry is positive."""
    v = np.moveaxis(vectors, axis, 0).copy()
    for i in range(v.shape[0]):
        j = int(np.argmax(np.abs(v[i])))
        if v[i, j] < 0:
            v[i] = -v[i]
    return np.moveaxis(v, 0, axis)


@dataclass(frozen=True, eq=False)
class Whitener:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, rows):
        return (_as_array(rows) - self.mean) / self.scale

    @property
    def scale(self):
        # columns with (near) zero training spread are centred only
        return np.where(self.std > STD_FLOOR, self.std, 1.0)


def whiten_fit(train) -> Whitener:
    X = _as_array(train)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("whitening needs at least two training rows")
    return Whitener(_frozen(X.mean(axis=0)), _frozen(X.std(axis=0)))


def whiten_apply(w: Whitener, rows):
    return w.apply(rows)


@dataclass(frozen=True, eq=False)
class PCAModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def n_components(self):
        return self.components.shape[0]

    def transform(self, rows):
        return (_as_array(rows) - self.mean) @ self.components.T

    def inverse_transform(self, reduced):
        return np.asarray(reduced) @ self.components + self.mean


def pca_fit(train, n_components: int) -> PCAModel:
    """Top eigenvectors of the training covariance.

    The eigenproblem is solved on the smaller of the p x p covariance and the
    n x n Gram matrix; the Gram route falls back to the covariance when a
    requested direction has (numerically) zero variance.
    """
    X = _as_array(train)
    n, p = X.shape
    if not 1 <= n_components <= min(n - 1, p):
        raise DataError(f"n_components={n_components} must be in [1, {min(n - 1, p)}] "
                        f"for {n} rows x {p} features")
    mean = X.mean(axis=0)
    Xc = X - mean
    total = float((Xc ** 2).sum() / (n - 1))
    m = n_components
    vecs = None
    if n < p:
        gram = Xc @ Xc.T / (n - 1)
        evals, U = eigh(gram)
        evals = evals[::-1][:m]
        U = U[:, ::-1][:, :m]
        if evals[-1] > 1e-12 * max(evals[0], 1e-300):
            vecs = (Xc.T @ U) / np.sqrt(evals * (n - 1))
    if vecs is None:
        cov = Xc.T @ Xc / (n - 1)
        evals, V = eigh(cov)
        evals = evals[::-1][:m]
        vecs = V[:, ::-1][:, :m]
    evals = np.clip(evals, 0.0, None)
    components = _fix_signs(vecs.T, axis=0)
    ratio = evals / total if total > 0 else np.zeros_like(evals)
    return PCAModel(_frozen(mean), _frozen(components), _frozen(evals), _frozen(ratio))


def pca_transform(model: PCAModel, rows):
    return model.transform(rows)


def _sq_distances(A, B):
    return ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)


def _reconstruction_weights(x, neighbours, reg):
    Z = neighbours - x
    C = Z @ Z.T
    k = C.shape[0]
    tr = float(np.trace(C))
    r = reg * tr / k if tr > 0 else reg
    C = C + r * np.eye(k)
    w = np.linalg.solve(C, np.ones(k))
    return w / w.sum()


@dataclass(frozen=True, eq=False)
class LLEModel:
    k: int
    m: int
    reg: float
    train: np.ndarray
    embedding: np.ndarray
    eigenvalues: np.ndarray

    @property
    def k_exceeds_m(self):
        return self.k > self.m

    def transform(self, rows):
        """Map rows by reconstructing them from their training neighbours."""
        R = _as_array(rows)
        if R.ndim == 1:
            R = R[None, :]
        d = _sq_distances(R, self.train)
        nbrs = np.argsort(d, axis=1, kind="stable")[:, : self.k]
        out = np.empty((R.shape[0], self.m))
        for i in range(R.shape[0]):
            w = _reconstruction_weights(R[i], self.train[nbrs[i]], self.reg)
            out[i] = w @ self.embedding[nbrs[i]]
        return out


def lle_embed(train, k: int = 10, m: int = 2, reg: float = 1e-3) -> LLEModel:
    """Locally linear embedding of the training rows.

    ``reg`` scales the Tikhonov term added to each local Gram matrix:
    ``reg * trace(C) / k`` (or ``reg`` itself when the trace is zero, as for
    duplicated points).
    """
    X = _as_array(train)
    n = X.shape[0]
    if k >= n:
        raise DataError(f"LLE needs k < rows, got k={k} with {n} rows")
    if not 1 <= m < k:
        raise DataError(f"LLE needs 1 <= m < k, got m={m}, k={k}")
    d = _sq_distances(X, X)
    np.fill_diagonal(d, np.inf)
    nbrs = np.argsort(d, axis=1, kind="stable")[:, :k]
    W = np.zeros((n, n))
    for i in range(n):
        W[i, nbrs[i]] = _reconstruction_weights(X[i], X[nbrs[i]], reg)
    IW = np.eye(n) - W
    M = IW.T @ IW
    evals, vecs = eigh(M, subset_by_index=[0, m])
    Y = vecs[:, 1 : m + 1]
    Y = Y - Y.mean(axis=0)
    Y = _fix_signs(Y, axis=1)
    return LLEModel(int(k), int(m), float(reg), _frozen(X), _frozen(Y), _frozen(evals[1:]))


def lle_transform(model: LLEModel, rows):
    return model.transform(rows)
