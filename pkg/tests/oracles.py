"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np


def best_disjoint_paths(graph) -> tuple[float, list[tuple[int, ...]]]:
    """Minimum total cost over every set of vertex-disjoint source-to-sink paths.

    Exhaustive: each proposal is either unused, or used with a chosen
    successor (the sink or a later linked proposal nobody else claimed).
    The empty set costs 0. Only meant for a handful of proposals.
    """
    n = len(graph.proposals)
    succ_edges = {k: dict(graph.links[k]) for k in range(n)}
    best = [0.0, {}]

    def rec(k, claimed, chosen, cost):
        if k == n:
            if cost < best[0] - 1e-12:
                best[0] = cost
                best[1] = dict(chosen)
            return
        options = []
        if k in claimed:
            base = cost + graph.observation[k]
        else:
            rec(k + 1, claimed, chosen, cost)
            base = cost + graph.entry_cost + graph.observation[k]
        options.append((None, base + graph.exit_cost))
        for j, c in succ_edges[k].items():
            if j not in claimed:
                options.append((j, base + c))
        for j, c in options:
            chosen[k] = j
            if j is None:
                rec(k + 1, claimed, chosen, c)
            else:
                rec(k + 1, claimed | {j}, chosen, c)
            del chosen[k]

    rec(0, frozenset(), {}, 0.0)
    chosen = best[1]
    heads = set(chosen) - {j for j in chosen.values() if j is not None}
    paths = []
    for h in sorted(heads):
        seq, k = [h], chosen[h]
        while k is not None:
            seq.append(k)
            k = chosen[k]
        paths.append(tuple(seq))
    return best[0], paths


def dbscan_reference(X: np.ndarray, eps: float, min_points: int) -> list[int]:
    """Density clustering defined without any expansion queue.

    Core points: at least ``min_points`` points (self included) within ``eps``.
    Clusters are connected components of the core-point graph, numbered by
    their smallest core index. A border point joins the lowest-numbered
    component among its core neighbours; everything else is noise (-1).
    """
    n = len(X)
    if n == 0:
        return []
    d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    nb = d <= eps
    core = nb.sum(1) >= min_points
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        if not core[i]:
            continue
        for j in range(i + 1, n):
            if core[j] and nb[i, j]:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    roots = sorted({find(i) for i in range(n) if core[i]}, key=lambda r: min(i for i in range(n) if core[i] and find(i) == r))
    number = {r: k for k, r in enumerate(roots)}
    labels = [-1] * n
    for i in range(n):
        if core[i]:
            labels[i] = number[find(i)]
    for i in range(n):
        if core[i]:
            continue
        cands = [labels[j] for j in range(n) if core[j] and nb[i, j]]
        if cands:
            labels[i] = min(cands)
    return labels


def same_partition(a, b) -> bool:
    """Equal up to relabelling, with -1 meaning noise on both sides."""
    if len(a) != len(b):
        return False
    fwd, bwd = {}, {}
    for x, y in zip(a, b):
        if (x == -1) != (y == -1):
            return False
        if x == -1:
            continue
        if fwd.setdefault(x, y) != y or bwd.setdefault(y, x) != x:
            return False
    return True


def maximal_cliques_bruteforce(n: int, edges: set[frozenset]) -> list[tuple[int, ...]]:
    """Every maximal clique by subset enumeration (n <= ~12)."""
    cliques = []
    for r in range(1, n + 1):
        for combo in itertools.combinations(range(n), r):
            if all(frozenset(p) in edges for p in itertools.combinations(combo, 2)):
                cliques.append(set(combo))
    maximal = [c for c in cliques if not any(c < o for o in cliques)]
    return sorted(tuple(sorted(c)) for c in maximal)


def silhouette_by_definition(X: np.ndarray, labels) -> float:
    """Per-point loop straight from the definition, singletons score 0."""
    labels = list(labels)
    n = len(X)
    ks = sorted(set(labels))
    total = 0.0
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            continue
        a = sum(math.dist(X[i], X[j]) for j in own) / len(own)
        b = min(
            sum(math.dist(X[i], X[j]) for j in range(n) if labels[j] == k)
            / sum(1 for j in range(n) if labels[j] == k)
            for k in ks
            if k != labels[i]
        )
        total += (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return total / n


def grid_empty(rect, boxes, step=1.0) -> bool:
    """Sample cell centres of ``rect`` and check none falls inside a box interior."""
    x0, y0, x1, y1 = rect
    xs = np.arange(x0 + step / 2, x1, step)
    ys = np.arange(y0 + step / 2, y1, step)
    if len(xs) == 0 or len(ys) == 0:
        return True
    gx, gy = np.meshgrid(xs, ys)
    for bx0, by0, bx1, by1 in boxes:
        inside = (gx > bx0) & (gx < bx1) & (gy > by0) & (gy < by1)
        if inside.any():
            return False
    return True
