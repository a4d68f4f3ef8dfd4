"""Dictionary entries from clusters, and dictionary quality metrics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..cluster import normalize_rows
from ..errors import CastError, IntegrityError
from ..metrics import contingency_from_assignment, majority_labels, purity
from ..model import ClusterSet, DictionaryEntry, EmbeddingSet


def representative(members: Sequence[str], emb: EmbeddingSet) -> str:
    """Member closest (Euclidean, L2-normalized space) to the coordinate-wise median; ties -> smaller id."""
    pts = normalize_rows(emb.rows(members))
    med = np.median(pts, axis=0)
    d = np.linalg.norm(pts - med, axis=1)
    best = min(range(len(members)), key=lambda k: (d[k], members[k]))
    return members[best]


def build_dictionary(clusters: ClusterSet, emb: EmbeddingSet) -> list[DictionaryEntry]:
    """One entry per cluster, represented by its medoid.

    Raises :class:`IntegrityError` when a cluster's stored medoid disagrees
    with the recomputed one (stale cluster file).
    """
    out = []
    for k, c in enumerate(clusters.clusters):
        rep = representative(c.members, emb)
        if rep != c.medoid:
            raise IntegrityError(f"cluster {c.cluster_id}: stored medoid {c.medoid} but closest-to-median is {rep}")
        out.append(DictionaryEntry(f"e{k}", c.cluster_id, rep))
    return out


@dataclass(frozen=True)
class DictionaryMetrics:
    precision: float
    recall: float
    f1: float
    purity: float
    median_exemplars: float
    mean_exemplars: float
    additional_characters: int
    exemplars: dict

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "purity": self.purity,
            "median_exemplars_per_character": self.median_exemplars,
            "avg_exemplars_per_character": self.mean_exemplars,
            "additional_characters": self.additional_characters,
        }


def dictionary_metrics(
    entries: Iterable[DictionaryEntry],
    clusters: ClusterSet,
    truth: Mapping[str, str | None],
    cast: Iterable[str] | None = None,
) -> DictionaryMetrics:
    """Score a dictionary against ground truth.

    ``truth`` maps proposal ids to character names (``None`` = not a
    character). ``cast`` is the set of characters the dictionary should
    find; it defaults to every character in ``truth``. Characters found
    outside ``cast`` are reported as additional characters. Discarded
    entries are ignored.
    """
    if not truth:
        raise CastError("empty ground truth")
    entries = [e for e in entries if not e.discarded]
    cast = set(cast) if cast is not None else {v for v in truth.values() if v is not None}
    if not cast:
        raise CastError("ground truth names no characters")
    by_id = clusters.by_id()
    assignment = {m: e.cluster_id for e in entries for m in by_id[e.cluster_id].members}
    majority = majority_labels(assignment, truth)
    labels = [majority.get(e.cluster_id) for e in entries]
    hits = [lab for lab in labels if lab is not None]
    precision = len(hits) / len(entries) if entries else 0.0
    found = set(hits)
    recall = len(found & cast) / len(cast)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    labelled = {m: c for m, c in assignment.items() if m in truth}
    pur = purity(contingency_from_assignment(labelled, truth)) if labelled else 0.0
    counts = Counter(hits)
    values = [counts[k] for k in sorted(counts)]
    return DictionaryMetrics(
        precision=precision,
        recall=recall,
        f1=f1,
        purity=pur,
        median_exemplars=float(np.median(values)) if values else float("nan"),
        mean_exemplars=float(np.mean(values)) if values else float("nan"),
        additional_characters=len(found - cast),
        exemplars=dict(sorted(counts.items())),
    )
