"""Near-duplicate proposal screening by clique aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import networkx as nx
import numpy as np

from ..errors import IntegrityError
from .edh import DedupConfig


@dataclass(frozen=True)
class DedupGroup:
    survivor: str
    members: tuple[str, ...]


def similarity_graph(features: np.ndarray, ids: Sequence[str], threshold: float) -> nx.Graph:
    """Undirected graph with an edge wherever cosine similarity >= ``threshold``."""
    F = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(F, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    F = F / norms
    sim = F @ F.T
    g = nx.Graph()
    g.add_nodes_from(ids)
    rows, cols = np.nonzero(np.triu(sim >= threshold, k=1))
    g.add_edges_from((ids[i], ids[j]) for i, j in zip(rows, cols))
    return g


def maximal_cliques(graph: nx.Graph) -> list[tuple[str, ...]]:
    """Maximal cliques (Bron-Kerbosch with pivoting), largest first, then lexicographic."""
    cliques = [tuple(sorted(c)) for c in nx.find_cliques(graph)]
    return sorted(cliques, key=lambda c: (-len(c), c))


def dedup_cliques(
    features,
    ids: Sequence[str],
    confidence: Mapping[str, float],
    config: DedupConfig = DedupConfig(),
) -> list[DedupGroup]:
    """Group near-duplicate proposals and keep one survivor per group.

    Maximal cliques of the pruned similarity graph are visited largest
    first; each claims its still-unassigned members as one group. The
    survivor is the most confident member (ties: smaller id). Groups are
    returned in claim order.
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise IntegrityError("duplicate proposal ids")
    features = np.asarray(features, dtype=np.float64)
    if len(ids) == 0:
        return []
    if features.shape[0] != len(ids):
        raise IntegrityError("one feature row per proposal required")
    graph = similarity_graph(features, ids, config.similarity_prune)
    assigned: set[str] = set()
    groups = []
    for clique in maximal_cliques(graph):
        members = tuple(m for m in clique if m not in assigned)
        if not members:
            continue
        assigned.update(members)
        survivor = min(members, key=lambda m: (-confidence.get(m, 0.0), m))
        groups.append(DedupGroup(survivor, members))
    return groups


def survivors(groups: Sequence[DedupGroup]) -> list[str]:
    return sorted(g.survivor for g in groups)
