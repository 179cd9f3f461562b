"""Directed flag complexes and their mod-2 homology.

A k-simplex is an ordered vertex tuple ``(v0, ..., vk)`` with an edge
``vi -> vj`` for every ``i < j``. Faces drop one vertex and keep the order.
Boundary ranks are computed over GF(2) with rows packed into Python ints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import FeatureMatrix
from .errors import DataError
from .graph_features import binarize

DEFAULT_MAX_DIM = 3
SIMPLEX_CAP = 100_000


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        edges = frozenset((int(i), int(j)) for i, j in self.edges)
        for i, j in edges:
            if i == j:
                raise DataError(f"self-loop ({i}, {i}) not allowed")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise DataError(f"edge ({i}, {j}) outside 0..{self.n - 1}")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_adjacency(cls, adj):
        adj = np.asarray(adj, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise DataError(f"adjacency must be square, got {adj.shape}")
        i, j = np.nonzero(adj)
        return cls(adj.shape[0], frozenset((a, b) for a, b in zip(i.tolist(), j.tolist()) if a != b))

    def out_sets(self):
        out = [set() for _ in range(self.n)]
        for i, j in self.edges:
            out[i].add(j)
        return out


@dataclass(frozen=True, eq=False)
class FlagComplex:
    simplices: tuple[tuple[tuple[int, ...], ...], ...]
    max_dim: int

    @property
    def counts(self) -> list[int]:
        return [len(s) for s in self.simplices]

    @property
    def size(self) -> int:
        return sum(self.counts)

    def dim(self) -> int:
        return len(self.simplices) - 1


def build_flag_complex(g: DirectedGraph, max_dim: int = DEFAULT_MAX_DIM) -> FlagComplex:
    """All directed cliques of dimension <= ``max_dim``, sorted per dimension."""
    if max_dim < 1:
        raise DataError("max_dim must be at least 1")
    out = g.out_sets()
    layers = [[(v,) for v in range(g.n)]]
    # each simplex is extended only by common out-neighbours of all its
    # vertices, appended as the new sink; that generates every tuple once
    sinks = [set(out[v]) for v in range(g.n)]
    for _ in range(max_dim):
        nxt, nxt_sinks = [], []
        for simplex, common in zip(layers[-1], sinks):
            for v in sorted(common):
                nxt.append(simplex + (v,))
                nxt_sinks.append(common & out[v])
        order = sorted(range(len(nxt)), key=nxt.__getitem__)
        layers.append([nxt[i] for i in order])
        sinks = [nxt_sinks[i] for i in order]
        if not nxt:
            break
    while len(layers) <= max_dim:
        layers.append([])
    return FlagComplex(tuple(tuple(layer) for layer in layers), int(max_dim))


def euler_characteristic(c: FlagComplex) -> int:
    return int(sum((-1) ** k * n for k, n in enumerate(c.counts)))


def _gf2_rank(rows: list[int]) -> int:
    """Rank of a GF(2) matrix whose rows are bitmask integers."""
    pivots: dict[int, int] = {}
    rank = 0
    for row in rows:
        while row:
            top = row.bit_length() - 1
            if top in pivots:
                row ^= pivots[top]
            else:
                pivots[top] = row
                rank += 1
                break
    return rank


def boundary_rank(c: FlagComplex, k: int) -> int:
    """Rank over GF(2) of the boundary map from k-simplices to (k-1)-simplices."""
    if k <= 0 or k >= len(c.simplices) or not c.simplices[k]:
        return 0
    index = {s: i for i, s in enumerate(c.simplices[k - 1])}
    rows = []
    for s in c.simplices[k]:
        mask = 0
        for drop in range(len(s)):
            mask |= 1 << index[s[:drop] + s[drop + 1:]]
        rows.append(mask)
    return _gf2_rank(rows)


def betti_numbers(c: FlagComplex, cap: int = SIMPLEX_CAP) -> list[int]:
    """Mod-2 Betti numbers of the complex as built, dimensions 0..max_dim.

    The top entry describes the truncated complex; it equals the Betti
    number of the full flag complex only if no simplex exists above
    ``max_dim``.
    """
    if c.size > cap:
        raise DataError(f"complex has {c.size} simplices, above the cap of {cap}")
    counts = c.counts
    ranks = [boundary_rank(c, k) for k in range(len(counts) + 1)]
    return [counts[k] - ranks[k] - ranks[k + 1] for k in range(len(counts))]


@dataclass(frozen=True)
class TopologySummary:
    counts: tuple[int, ...]
    euler_characteristic: int
    betti: tuple[int, ...]

    def as_row(self) -> list[int]:
        return list(self.counts) + [self.euler_characteristic] + list(self.betti)


def summary_names(max_dim: int) -> list[str]:
    return ([f"count_{k}" for k in range(max_dim + 1)] + ["euler"]
            + [f"betti_{k}" for k in range(max_dim)])


def topology_summary(g: DirectedGraph, max_dim: int = DEFAULT_MAX_DIM,
                     cap: int = SIMPLEX_CAP) -> TopologySummary:
    """Simplex counts 0..max_dim, Euler characteristic, Betti 0..max_dim-1.

    Betti numbers below ``max_dim`` are unaffected by the dimension cap.
    """
    c = build_flag_complex(g, max_dim)
    betti = betti_numbers(c, cap)
    return TopologySummary(tuple(c.counts), euler_characteristic(c), tuple(betti[:max_dim]))


def topology_block(connectivity, threshold=None, density=None, max_dim: int = DEFAULT_MAX_DIM,
                   cap: int = SIMPLEX_CAP):
    """Topology-summary block; undirected edges count in both directions."""
    if not connectivity:
        raise DataError("cohort has no connectivity matrices")
    ids = sorted(connectivity)
    rows = []
    for sid in ids:
        b = binarize(connectivity[sid], threshold=threshold, density=density)
        adj = b if isinstance(b, np.ndarray) else b.adjacency
        rows.append(topology_summary(DirectedGraph.from_adjacency(adj), max_dim, cap).as_row())
    return FeatureMatrix(ids, summary_names(max_dim), np.array(rows, dtype=float), "topology",
                         {"threshold": str(threshold), "density": str(density), "max_dim": str(max_dim)})
