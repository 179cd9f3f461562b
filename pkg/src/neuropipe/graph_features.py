"""Binary-graph metrics of a connectivity matrix, flattened into a feature row.

Conventions for disconnected graphs: unreachable pairs add 0 to efficiency
and are left out of path-length averages; closeness is computed within a
node's component and scaled by ``(reachable - 1) / (n - 1)``. Betweenness
is unnormalized, counting each unordered pair once.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .cohort import ConnectivityMatrix, FeatureMatrix
from .errors import DataError

NODE_METRICS = (
    "clustering",
    "local_efficiency",
    "degree_centrality",
    "closeness_centrality",
    "betweenness_centrality",
    "avg_neighbor_degree",
)
GLOBAL_METRICS = ("characteristic_path_length", "global_efficiency")


@dataclass(frozen=True, eq=False)
class Graph:
    adjacency: np.ndarray
    node_names: tuple[str, ...]

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=bool).copy()
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DataError(f"adjacency must be square, got {a.shape}")
        if np.any(np.diag(a)):
            raise DataError("graph has self-loops")
        if not np.array_equal(a, a.T):
            raise DataError("graph adjacency must be symmetric")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        names = tuple(self.node_names) if self.node_names else tuple(str(i) for i in range(a.shape[0]))
        if len(names) != a.shape[0]:
            raise DataError(f"{len(names)} node names for {a.shape[0]} nodes")
        object.__setattr__(self, "node_names", names)

    @property
    def n(self):
        return self.adjacency.shape[0]

    def neighbours(self):
        return [np.flatnonzero(row).tolist() for row in self.adjacency]

    @classmethod
    def from_edges(cls, n, edges, names=None):
        a = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            a[i, j] = a[j, i] = True
        return cls(a, tuple(names) if names else ())


def _ranked_pairs(weights, directed):
    """Candidate edges sorted by descending |weight|, ties by (i, j)."""
    n = weights.shape[0]
    if directed:
        i, j = np.nonzero(~np.eye(n, dtype=bool))
    else:
        i, j = np.triu_indices(n, k=1)
    w = np.abs(weights[i, j])
    order = np.lexsort((j, i, -w))
    return i[order], j[order], w[order]


def binarize(matrix: ConnectivityMatrix, threshold=None, density=None) -> np.ndarray | Graph:
    """Threshold a weighted matrix into a binary graph.

    Exactly one of ``threshold`` (edge iff |w| > threshold) or ``density``
    (keep the top fraction of non-zero off-diagonal |w|, at least one edge)
    must be given. Returns a :class:`Graph` for undirected input and a
    boolean adjacency array for directed input.
    """
    if (threshold is None) == (density is None):
        raise DataError("give exactly one of threshold or density")
    W = matrix.weights
    n = W.shape[0]
    adj = np.zeros((n, n), dtype=bool)
    if threshold is not None:
        adj = np.abs(W) > threshold
        np.fill_diagonal(adj, False)
        if not matrix.directed:
            adj = np.triu(adj, 1)
    else:
        if not 0 < density <= 1:
            raise DataError(f"density must be in (0, 1], got {density}")
        i, j, w = _ranked_pairs(W, matrix.directed)
        keep = max(1, int(np.floor(density * len(w) + 1e-9))) if len(w) else 0
        sel = np.arange(len(w))[:keep]
        sel = sel[w[sel] > 0]
        adj[i[sel], j[sel]] = True
    if matrix.directed:
        return adj
    adj = adj | adj.T
    return Graph(adj, matrix.roi_names)


def _bfs(nbrs, source):
    """Distances, shortest-path counts and BFS order from ``source``."""
    n = len(nbrs)
    dist = [-1] * n
    sigma = [0] * n
    preds = [[] for _ in range(n)]
    dist[source] = 0
    sigma[source] = 1
    order = []
    q = deque([source])
    while q:
        v = q.popleft()
        order.append(v)
        for w in nbrs[v]:
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                q.append(w)
            if dist[w] == dist[v] + 1:
                sigma[w] += sigma[v]
                preds[w].append(v)
    return dist, sigma, preds, order


def _all_distances(nbrs):
    return [_bfs(nbrs, s)[0] for s in range(len(nbrs))]


def _efficiency(nbrs):
    n = len(nbrs)
    if n < 2:
        return 0.0
    total = 0.0
    for s in range(n):
        dist = _bfs(nbrs, s)[0]
        total += sum(1.0 / d for d in dist if d > 0)
    return total / (n * (n - 1))


def betweenness(g: Graph) -> np.ndarray:
    """Brandes accumulation over all sources; each unordered pair counted once."""
    nbrs = g.neighbours()
    cb = np.zeros(g.n)
    for s in range(g.n):
        dist, sigma, preds, order = _bfs(nbrs, s)
        delta = [0.0] * g.n
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                cb[w] += delta[w]
    return cb / 2.0


def node_metrics(g: Graph) -> np.ndarray:
    """(n, 6) table with columns in :data:`NODE_METRICS` order."""
    n = g.n
    nbrs = g.neighbours()
    A = g.adjacency
    deg = A.sum(axis=1).astype(float)
    out = np.zeros((n, len(NODE_METRICS)))
    dists = _all_distances(nbrs)
    bc = betweenness(g)
    for v in range(n):
        k = len(nbrs[v])
        if k >= 2:
            sub = A[np.ix_(nbrs[v], nbrs[v])]
            triangles = sub.sum() / 2.0
            out[v, 0] = triangles / (k * (k - 1) / 2.0)
            local = [np.flatnonzero(row).tolist() for row in sub]
            out[v, 1] = _efficiency(local)
        out[v, 2] = k / (n - 1) if n > 1 else 0.0
        reach = [d for d in dists[v] if d > 0]
        if reach:
            r = len(reach) + 1
            out[v, 3] = (r - 1) / sum(reach) * (r - 1) / (n - 1)
        out[v, 4] = bc[v]
        if k:
            out[v, 5] = deg[nbrs[v]].mean()
    return out


def global_metrics(g: Graph):
    """(characteristic path length, global efficiency).

    The path length is NaN when no pair of distinct nodes is connected.
    """
    n = g.n
    if n < 2:
        raise DataError("metric undefined for graphs with fewer than 2 nodes")
    dists = _all_distances(g.neighbours())
    reach = [d for row in dists for d in row if d > 0]
    eff = sum(1.0 / d for d in reach) / (n * (n - 1))
    cpl = sum(reach) / len(reach) if reach else float("nan")
    return cpl, eff


@dataclass(frozen=True, eq=False)
class GraphFeatureVector:
    values: np.ndarray
    names: tuple[str, ...]

    def __len__(self):
        return self.values.shape[0]


def feature_names(node_names) -> tuple[str, ...]:
    names = [f"{node}:{metric}" for node in node_names for metric in NODE_METRICS]
    return tuple(names) + GLOBAL_METRICS


def graph_feature_vector(g: Graph) -> GraphFeatureVector:
    """Node-major per-node metrics followed by the two global metrics (6n + 2)."""
    if g.n < 2:
        raise DataError("metric undefined for graphs with fewer than 2 nodes")
    per_node = node_metrics(g)
    cpl, eff = global_metrics(g)
    values = np.concatenate([per_node.ravel(), [cpl, eff]])
    return GraphFeatureVector(values, feature_names(g.node_names))


def graph_block(connectivity, threshold=None, density=None) -> FeatureMatrix:
    """Graph-feature block, one row per subject id of ``connectivity``.

    An undefined characteristic path length (no connected pair) is stored
    as 0 so the block stays finite; the affected ids are listed in the
    block provenance under ``path_length_undefined``.
    """
    if not connectivity:
        raise DataError("cohort has no connectivity matrices")
    ids = sorted(connectivity)
    rows, names, undefined = [], None, []
    for sid in ids:
        m = connectivity[sid]
        if m.directed:
            raise DataError(f"{sid}: graph metrics need an undirected matrix")
        vec = graph_feature_vector(binarize(m, threshold=threshold, density=density))
        if names is not None and vec.names != names:
            raise DataError(f"{sid}: ROI names differ from the other subjects")
        names = vec.names
        values = np.array(vec.values)
        if np.isnan(values[-2]):
            values[-2] = 0.0
            undefined.append(sid)
        rows.append(values)
    return FeatureMatrix(ids, names, np.vstack(rows), "graph",
                         {"threshold": str(threshold), "density": str(density),
                          "path_length_undefined": ",".join(undefined)})
