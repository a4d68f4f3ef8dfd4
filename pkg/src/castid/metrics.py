"""Clustering-quality metrics over a class x cluster contingency table."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import CastError


@dataclass(frozen=True)
class Contingency:
    """Counts of (class, cluster) co-occurrences.

    ``counts[i, j]`` is the number of items of class ``classes[i]`` placed in
    cluster ``clusters[j]``.
    """

    counts: np.ndarray
    classes: tuple = ()
    clusters: tuple = ()

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError("contingency table must be 2-D")
        if counts.size and (counts.min() < 0 or not np.all(counts == np.round(counts))):
            raise ValueError("contingency counts must be non-negative integers")
        counts = counts.astype(np.int64)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        if not self.classes:
            object.__setattr__(self, "classes", tuple(range(counts.shape[0])))
        if not self.clusters:
            object.__setattr__(self, "clusters", tuple(range(counts.shape[1])))

    @classmethod
    def from_labels(cls, truth: Sequence[Hashable], predicted: Sequence[Hashable]) -> "Contingency":
        if len(truth) != len(predicted):
            raise ValueError("truth and predicted label sequences differ in length")
        classes = tuple(sorted(set(truth), key=repr))
        clusters = tuple(sorted(set(predicted), key=repr))
        ci = {c: k for k, c in enumerate(classes)}
        ki = {c: k for k, c in enumerate(clusters)}
        counts = np.zeros((len(classes), len(clusters)), dtype=np.int64)
        for t, p in zip(truth, predicted):
            counts[ci[t], ki[p]] += 1
        return cls(counts, classes, clusters)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _require_nonempty(self):
        if self.total <= 0:
            raise CastError("empty contingency table")


def purity(table: Contingency) -> float:
    """Cluster purity: each cluster votes for its majority class."""
    table._require_nonempty()
    return float(table.counts.max(axis=0).sum()) / table.total


def class_purity(table: Contingency) -> float:
    """Inverse purity: each class votes for the cluster holding most of it."""
    table._require_nonempty()
    return float(table.counts.max(axis=1).sum()) / table.total


def k_metric(table: Contingency) -> float:
    """Geometric mean of cluster purity and class purity."""
    return math.sqrt(purity(table) * class_purity(table))


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def nmi(table: Contingency) -> float:
    """Mutual information normalized by the geometric mean of the entropies."""
    table._require_nonempty()
    joint = table.counts / table.total
    pc = joint.sum(axis=1)
    pk = joint.sum(axis=0)
    hc, hk = _entropy(pc), _entropy(pk)
    if hc == 0.0 or hk == 0.0:
        # both sides constant: identical partitions
        return 1.0 if hc == hk else 0.0
    nz = joint > 0
    outer = np.outer(pc, pk)
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    return min(max(mi / math.sqrt(hc * hk), 0.0), 1.0)


@dataclass(frozen=True)
class ClustersPerCharacter:
    median: float
    mean: float
    per_character: dict

    @property
    def characters_found(self) -> int:
        return len(self.per_character)


def clusters_per_character(
    assignment: Mapping[str, str], truth: Mapping[str, str | None]
) -> ClustersPerCharacter:
    """Count, for each character, the clusters in which it is the majority label.

    Only characters that win at least one cluster are counted: a character
    absorbed into someone else's cluster is a recall loss, not a low score.
    Majority ties are broken by the smaller label. Non-character proposals
    (truth ``None``) take part in the vote but are never counted.
    """
    members: dict[str, list] = {}
    for pid, cid in assignment.items():
        if pid in truth:
            members.setdefault(cid, []).append(truth[pid])
    counts: Counter = Counter()
    for cid, labels in members.items():
        votes = Counter(labels)
        top = max(votes.values())
        winner = min((lab for lab, n in votes.items() if n == top), key=lambda v: (v is None, str(v)))
        if winner is not None:
            counts[winner] += 1
    values = [counts[k] for k in sorted(counts)]
    if not values:
        return ClustersPerCharacter(float("nan"), float("nan"), {})
    return ClustersPerCharacter(
        float(np.median(values)), float(np.mean(values)), {k: counts[k] for k in sorted(counts)}
    )


def majority_labels(assignment: Mapping[str, str], truth: Mapping[str, str | None]) -> dict:
    """cluster_id -> majority truth label (ties -> smaller label, characters before None)."""
    members: dict[str, list] = {}
    for pid, cid in assignment.items():
        if pid in truth:
            members.setdefault(cid, []).append(truth[pid])
    out = {}
    for cid, labels in members.items():
        votes = Counter(labels)
        top = max(votes.values())
        out[cid] = min((lab for lab, n in votes.items() if n == top), key=lambda v: (v is None, str(v)))
    return out


def contingency_from_assignment(
    assignment: Mapping[str, str], truth: Mapping[str, str | None], non_character: str = "<none>"
) -> Contingency:
    """Contingency over clustered proposals that have a ground-truth entry."""
    pids = [p for p in assignment if p in truth]
    t = [truth[p] if truth[p] is not None else non_character for p in pids]
    k = [assignment[p] for p in pids]
    return Contingency.from_labels(t, k)
