"""Slow, obviously-correct reference implementations used only by tests."""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations, permutations

import numpy as np


# ------------------------------------------------------------ graph metrics

def simple_paths(adj, s, t):
    """Every simple path from s to t, as vertex lists (DFS enumeration)."""
    n = len(adj)
    out = []

    def walk(path, seen):
        v = path[-1]
        if v == t:
            out.append(list(path))
            return
        for w in range(n):
            if adj[v][w] and w not in seen:
                seen.add(w)
                path.append(w)
                walk(path, seen)
                path.pop()
                seen.remove(w)

    walk([s], {s})
    return out


def shortest_paths(adj, s, t):
    paths = simple_paths(adj, s, t)
    if not paths:
        return None, []
    d = min(len(p) - 1 for p in paths)
    return d, [p for p in paths if len(p) - 1 == d]


def distance_table(adj):
    n = len(adj)
    D = [[0 if i == j else None for j in range(n)] for i in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i][j] = shortest_paths(adj, i, j)[0]
    return D


def efficiency(adj):
    n = len(adj)
    if n < 2:
        return Fraction(0)
    D = distance_table(adj)
    total = sum(Fraction(1, D[i][j]) for i in range(n) for j in range(n) if i != j and D[i][j])
    return total / (n * (n - 1))


def oracle_metrics(adj):
    """(per-node rows of 6 Fractions, (path length or None, efficiency))."""
    adj = [[bool(x) for x in row] for row in adj]
    n = len(adj)
    D = distance_table(adj)
    nb = [[j for j in range(n) if adj[i][j]] for i in range(n)]
    deg = [len(x) for x in nb]
    bc = [Fraction(0)] * n
    for s, t in combinations(range(n), 2):
        d, paths = shortest_paths(adj, s, t)
        if not paths:
            continue
        for v in range(n):
            if v in (s, t):
                continue
            through = sum(1 for p in paths if v in p)
            bc[v] += Fraction(through, len(paths))
    rows = []
    for v in range(n):
        k = deg[v]
        if k >= 2:
            tri = sum(1 for a, b in combinations(nb[v], 2) if adj[a][b])
            clust = Fraction(tri, k * (k - 1) // 2)
            sub = [[adj[a][b] for b in nb[v]] for a in nb[v]]
            loc = efficiency(sub)
        else:
            clust = loc = Fraction(0)
        dc = Fraction(k, n - 1)
        reach = [D[v][u] for u in range(n) if u != v and D[v][u] is not None]
        if reach:
            r = len(reach) + 1
            clo = Fraction(r - 1, sum(reach)) * Fraction(r - 1, n - 1)
        else:
            clo = Fraction(0)
        avg_nd = Fraction(sum(deg[u] for u in nb[v]), k) if k else Fraction(0)
        rows.append([clust, loc, dc, clo, bc[v], avg_nd])
    pairs = [D[i][j] for i in range(n) for j in range(n) if i != j and D[i][j] is not None]
    cpl = Fraction(sum(pairs), len(pairs)) if pairs else None
    return rows, (cpl, efficiency(adj))


# ------------------------------------------------------------------ topology

def oracle_simplices(n, edges, max_dim):
    """Directed cliques found by testing every ordered vertex tuple."""
    E = set(edges)
    out = [[(v,) for v in range(n)]]
    for k in range(1, max_dim + 1):
        layer = []
        for tup in permutations(range(n), k + 1):
            if all((tup[i], tup[j]) in E for i in range(k + 1) for j in range(i + 1, k + 1)):
                layer.append(tup)
        out.append(sorted(layer))
    return out


def gf2_rank_dense(M):
    """Rank over GF(2) by row reduction of a dense 0/1 numpy array."""
    A = (np.array(M, dtype=np.uint8) % 2).copy()
    if A.size == 0:
        return 0
    rows, cols = A.shape
    r = 0
    for c in range(cols):
        piv = next((i for i in range(r, rows) if A[i, c]), None)
        if piv is None:
            continue
        A[[r, piv]] = A[[piv, r]]
        for i in range(rows):
            if i != r and A[i, c]:
                A[i] ^= A[r]
        r += 1
        if r == rows:
            break
    return r


def boundary_matrix(lower, upper):
    idx = {s: i for i, s in enumerate(lower)}
    M = np.zeros((len(lower), len(upper)), dtype=np.uint8)
    for j, s in enumerate(upper):
        for d in range(len(s)):
            M[idx[s[:d] + s[d + 1:]], j] = 1
    return M


def oracle_betti(simplices):
    counts = [len(s) for s in simplices]
    ranks = [0] * (len(counts) + 1)
    for k in range(1, len(counts)):
        if counts[k] and counts[k - 1]:
            ranks[k] = gf2_rank_dense(boundary_matrix(simplices[k - 1], simplices[k]))
    return [counts[k] - ranks[k] - ranks[k + 1] for k in range(len(counts))]


# ------------------------------------------------------------------- report

def oracle_operating_point(y, s, target):
    """Exhaustive search over every threshold: max TPR with FPR <= target."""
    y = list(y)
    s = list(s)
    pos = sum(y)
    neg = len(y) - pos
    best = None
    for t in sorted(set(s)) + [float("inf")]:
        fp = sum(1 for yi, si in zip(y, s) if yi == 0 and si >= t)
        tp = sum(1 for yi, si in zip(y, s) if yi == 1 and si >= t)
        fpr, tpr = fp / neg, tp / pos
        if fpr > target + 1e-12:
            continue
        cand = (tpr, t, fpr)
        if best is None or tpr > best[0] or (tpr == best[0] and t > best[1]):
            best = cand
    return best[2], best[0], best[1]


# ---------------------------------------------------------------------- pcq

def naive_rate(rows, true_class, decided):
    num = den = 0
    for r in rows:
        if r.true_status == true_class:
            den += 1
            num += r.predicted == decided
    return Fraction(num, den)


def best_partition_1d(values, k):
    """Minimum within-cluster SSE over all contiguous partitions of sorted values."""
    v = sorted(values)
    n = len(v)
    best = None
    for cuts in combinations(range(1, n), k - 1):
        bounds = (0,) + cuts + (n,)
        groups = [v[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        sse = sum(sum((x - np.mean(g)) ** 2 for x in g) for g in groups)
        if best is None or sse < best[0] - 1e-15:
            best = (sse, groups)
    return best
