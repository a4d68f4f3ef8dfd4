"""Density clustering of embeddings with epsilon search, confidence filtering and merging."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import IntegrityError, UndefinedScoreError
from .model import Cluster, ClusterSet, EmbeddingSet

logger = logging.getLogger(__name__)

NOISE = -1
GRID_POINTS = 16
MAX_BISECTIONS = 30
EDGE_BISECTIONS = 12


@dataclass(frozen=True)
class ClusterConfig:
    lambda1: float = 0.275
    lambda2: float = 0.4
    merge_similarity: float = 0.7
    k_min: int = 25
    k_max: int = 60
    min_points: int = 5
    eps_lo: float = 0.01
    eps_hi: float = 1.5

    def __post_init__(self):
        if self.lambda1 <= 0:
            raise IntegrityError("lambda1 must be > 0")
        if self.lambda2 < 0:
            raise IntegrityError("lambda2 must be >= 0")
        if not 0.0 < self.merge_similarity < 1.0:
            raise IntegrityError("merge_similarity must lie in (0, 1)")
        if not 1 <= self.k_min <= self.k_max:
            raise IntegrityError("need 1 <= k_min <= k_max")
        if self.min_points < 1:
            raise IntegrityError("min_points must be >= 1")
        if not 0.0 < self.eps_lo < self.eps_hi:
            raise IntegrityError("need 0 < eps_lo < eps_hi")


def normalize_rows(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return X / norms


# -- DBSCAN ------------------------------------------------------------------


def dbscan_labels(D: np.ndarray, eps: float, min_points: int) -> np.ndarray:
    """DBSCAN on a precomputed distance matrix.

    Points are visited, and neighbours expanded, in row order; a border point
    reachable from several clusters joins the first one to reach it. Labels
    are ``0..k-1`` in order of discovery, ``-1`` for noise.
    """
    n = D.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    if eps <= 0:
        raise IntegrityError("eps must be > 0")
    within = D <= eps
    neighbours = [np.flatnonzero(row) for row in within]
    core = np.fromiter((len(nb) >= min_points for nb in neighbours), dtype=bool, count=n)
    visited = np.zeros(n, dtype=bool)
    k = 0
    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        if not core[i]:
            continue
        labels[i] = k
        queue = deque(neighbours[i])
        while queue:
            q = queue.popleft()
            if labels[q] == NOISE:
                labels[q] = k
            if visited[q]:
                continue
            visited[q] = True
            if core[q]:
                queue.extend(neighbours[q])
        k += 1
    return labels


def _id_order(ids: Sequence[str]) -> list[int]:
    return sorted(range(len(ids)), key=lambda i: ids[i])


def _medoid(X: np.ndarray, idx: Sequence[int], ids: Sequence[str]) -> int:
    """Index (into X) of the member closest to the coordinate-wise median; ties -> smaller id."""
    pts = X[list(idx)]
    med = np.median(pts, axis=0)
    d = np.linalg.norm(pts - med, axis=1)
    best = min(range(len(idx)), key=lambda k: (d[k], ids[idx[k]]))
    return idx[best]


def labels_to_clusterset(
    labels: Sequence[int], ids: Sequence[str], X: np.ndarray, scores: Mapping[str, float] | None = None
) -> ClusterSet:
    """Members ordered by id; clusters keep label order and are named ``c<label>``."""
    labels = np.asarray(labels)
    groups: dict[int, list[int]] = {}
    for i in _id_order(ids):
        groups.setdefault(int(labels[i]), []).append(i)
    clusters = []
    for lab in sorted(k for k in groups if k != NOISE):
        idx = groups[lab]
        med = _medoid(X, idx, ids)
        sc = tuple(scores[ids[i]] for i in idx) if scores is not None else ()
        clusters.append(Cluster(f"c{lab}", tuple(ids[i] for i in idx), ids[med], sc))
    noise = tuple(ids[i] for i in groups.get(NOISE, []))
    return ClusterSet(tuple(clusters), noise)


def dbscan(vectors, eps: float, min_points: int = 5, ids: Sequence[str] | None = None) -> ClusterSet:
    """Euclidean DBSCAN; neighbours are expanded in ascending proposal_id order."""
    X = np.asarray(vectors, dtype=np.float64)
    if ids is None:
        width = len(str(max(len(X) - 1, 0)))
        ids = [f"{i:0{width}d}" for i in range(len(X))]
    ids = list(ids)
    if len(X) == 0:
        return ClusterSet()
    order = _id_order(ids)
    Xs = X[order]
    labels_sorted = dbscan_labels(cdist(Xs, Xs), eps, min_points)
    labels = np.empty_like(labels_sorted)
    labels[order] = labels_sorted
    return labels_to_clusterset(labels, ids, X)


# -- silhouette --------------------------------------------------------------


def silhouette_from_distances(D: np.ndarray, labels: Sequence[int]) -> float:
    """Mean silhouette over non-noise points; singleton-cluster points score 0."""
    labels = np.asarray(labels)
    keep = np.flatnonzero(labels != NOISE)
    lab = labels[keep]
    ks = np.unique(lab)
    if len(ks) < 2:
        raise UndefinedScoreError(f"silhouette needs >= 2 clusters, got {len(ks)}")
    Dk = D[np.ix_(keep, keep)]
    onehot = (lab[:, None] == ks[None, :]).astype(np.float64)
    sizes = onehot.sum(0)
    sums = Dk @ onehot  # point x cluster distance sums
    own = np.searchsorted(ks, lab)
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(len(lab)), own] / np.maximum(own_size - 1, 1), 0.0)
    means = sums / sizes[None, :]
    means[np.arange(len(lab)), own] = np.inf
    b = means.min(1)
    denom = np.maximum(a, b)
    s = np.where((own_size > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def silhouette(vectors, labels: Sequence[int]) -> float:
    X = np.asarray(vectors, dtype=np.float64)
    return silhouette_from_distances(cdist(X, X), labels)


# -- epsilon search ----------------------------------------------------------


@dataclass
class EpsilonSearch:
    """Outcome of :func:`search_epsilon`.

    ``labels`` are indexed like the input vectors. ``warning`` is set when the
    requested cluster-count range was never reached.
    """

    eps: float
    labels: np.ndarray
    objective: float
    num_clusters: int
    warning: str | None = None
    probes: list[tuple[float, int, int]] = field(default_factory=list)  # (eps, clusters, noise)


def search_epsilon(vectors, config: ClusterConfig = ClusterConfig(), ids: Sequence[str] | None = None) -> EpsilonSearch:
    """Pick DBSCAN's eps in two stages.

    Stage 1 bisects eps until the cluster count lands in ``[k_min, k_max]``
    (larger eps, fewer clusters; a mostly-noise probe also counts as too
    small). Stage 2 finds the edges of the admissible eps interval and scans
    16 evenly spaced eps in it, maximizing silhouette times the number of
    clustered points; ties go to the smaller eps.
    """
    X = normalize_rows(vectors)
    n = len(X)
    if ids is None:
        ids = [f"{i:08d}" for i in range(n)]
    order = _id_order(list(ids))
    Xs = X[order]
    D = cdist(Xs, Xs)
    cache: dict[float, tuple[np.ndarray, int, int]] = {}
    probes: list[tuple[float, int, int]] = []

    def run(eps: float):
        if eps not in cache:
            lab = dbscan_labels(D, eps, config.min_points)
            k = int(lab.max() + 1) if n else 0
            noise = int((lab == NOISE).sum())
            cache[eps] = (lab, k, noise)
            probes.append((eps, k, noise))
        return cache[eps]

    def admissible(eps: float) -> bool:
        return config.k_min <= run(eps)[1] <= config.k_max

    def too_small(eps: float) -> bool:
        _, k, noise = run(eps)
        return k > config.k_max or (k < config.k_min and noise > n / 2)

    def objective(eps: float) -> float:
        lab, k, noise = run(eps)
        if k < 2:
            return -math.inf
        return silhouette_from_distances(D, lab) * (n - noise)

    def unsort(lab: np.ndarray) -> np.ndarray:
        out = np.empty_like(lab)
        out[order] = lab
        return out

    lo, hi = config.eps_lo, config.eps_hi
    found = None
    for eps in (lo, hi):
        if admissible(eps):
            found = eps
            break
    for _ in range(MAX_BISECTIONS if found is None else 0):
        mid = 0.5 * (lo + hi)
        if admissible(mid):
            found = mid
            break
        if too_small(mid):
            lo = mid
        else:
            hi = mid

    if found is None:
        scored = [(objective(e), -e) for e in sorted(cache)]
        best_j, neg_eps = max(scored) if scored else (-math.inf, -config.eps_hi)
        if best_j == -math.inf:
            eps = config.eps_hi
            lab, k, _ = run(eps)
            msg = "no eps produced two or more clusters; fell back to eps_hi"
            logger.warning(msg)
            return EpsilonSearch(eps, unsort(lab), -math.inf, k, msg, probes)
        eps = -neg_eps
        lab, k, _ = run(eps)
        msg = f"cluster count never reached [{config.k_min}, {config.k_max}]; best probe eps={eps:.6g} kept"
        logger.warning(msg)
        return EpsilonSearch(eps, unsort(lab), best_j, k, msg, probes)

    # admissible interval edges
    a_out, a_in = lo, found
    if admissible(lo):
        a_in = lo
    else:
        for _ in range(EDGE_BISECTIONS):
            mid = 0.5 * (a_out + a_in)
            if admissible(mid):
                a_in = mid
            else:
                a_out = mid
    b_in, b_out = found, hi
    if admissible(hi):
        b_in = hi
    else:
        for _ in range(EDGE_BISECTIONS):
            mid = 0.5 * (b_in + b_out)
            if admissible(mid):
                b_in = mid
            else:
                b_out = mid

    grid = [float(e) for e in np.linspace(a_in, b_in, GRID_POINTS)]
    best = None
    for eps in grid + [found]:
        if not admissible(eps):
            continue
        j = objective(eps)
        if best is None or j > best[0] or (j == best[0] and eps < best[1]):
            best = (j, eps)
    j, eps = best
    lab, k, _ = run(eps)
    return EpsilonSearch(eps, unsort(lab), j, k, None, probes)


# -- confidence filtering ----------------------------------------------------


def confidence_score(detection_confidence: float, x, mu, lambda1: float = 0.275) -> float:
    """Detection confidence times ``exp(-|x - mu|^2 / lambda1^2)``."""
    x, mu = np.asarray(x, dtype=np.float64), np.asarray(mu, dtype=np.float64)
    if x.shape != mu.shape:
        raise IntegrityError("x and mu differ in dimension")
    r2 = float(((x - mu) ** 2).sum())
    return float(detection_confidence) * math.exp(-r2 / (lambda1 * lambda1))


def outlier_threshold(scores: Sequence[float], lambda2: float = 0.4) -> float:
    """``Q25 - lambda2 * IQR`` with linear-interpolation quantiles."""
    s = np.asarray(scores, dtype=np.float64)
    q25, q75 = np.quantile(s, [0.25, 0.75], method="linear")
    return float(q25 - lambda2 * (q75 - q25))


def filter_outliers(scores: Sequence[float], lambda2: float = 0.4) -> tuple[list[int], list[int]]:
    """Split member positions into (retained, ejected); ejected iff score < threshold."""
    if len(scores) == 0:
        return [], []
    thr = outlier_threshold(scores, lambda2)
    retained = [i for i, s in enumerate(scores) if not s < thr]
    ejected = [i for i, s in enumerate(scores) if s < thr]
    return retained, ejected


# -- merging -----------------------------------------------------------------


def _merge_once(clusters: list[Cluster], index: Mapping[str, int], X: np.ndarray, threshold: float):
    if len(clusters) < 2:
        return clusters, False
    centers = np.vstack([X[[index[m] for m in c.members]].mean(0) for c in clusters])
    centers = normalize_rows(centers)
    sim = centers @ centers.T
    parent = list(range(len(clusters)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    changed = False
    for i in range(len(clusters)):
        for j in range(i + 1, len(clusters)):
            if sim[i, j] >= threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
                    changed = True
    if not changed:
        return clusters, False
    groups: dict[int, list[int]] = {}
    for i in range(len(clusters)):
        groups.setdefault(find(i), []).append(i)
    merged = []
    for root in sorted(groups):
        parts = [clusters[i] for i in groups[root]]
        pairs = sorted((m, s) for c in parts for m, s in zip(c.members, c.scores or (None,) * len(c)))
        members = tuple(m for m, _ in pairs)
        scores = tuple(s for _, s in pairs) if all(s is not None for _, s in pairs) else ()
        merged.append(Cluster(parts[0].cluster_id, members, members[0], scores))
    return merged, True


def merge_clusters(clusters: ClusterSet, emb: EmbeddingSet, merge_similarity: float = 0.7) -> ClusterSet:
    """Merge clusters whose mean centers have cosine similarity >= ``merge_similarity``.

    Similar pairs form a graph whose connected components merge; this repeats
    until no pair qualifies, so the result is a fixed point. Medoids are
    recomputed on L2-normalized vectors.
    """
    X = normalize_rows(emb.matrix) if len(emb) else np.zeros((0, 1))
    index = {pid: k for k, pid in enumerate(emb.ids)}
    current = list(clusters.clusters)
    changed = True
    while changed:
        current, changed = _merge_once(current, index, X, merge_similarity)
    out = []
    for c in current:
        idx = [index[m] for m in c.members]
        order = sorted(range(len(idx)), key=lambda k: c.members[k])
        members = tuple(c.members[k] for k in order)
        scores = tuple(c.scores[k] for k in order) if c.scores else ()
        med = _medoid(X, [index[m] for m in members], emb.ids)
        out.append(Cluster(c.cluster_id, members, emb.ids[med], scores))
    return ClusterSet(tuple(out), clusters.noise)


# -- full pipeline -----------------------------------------------------------


@dataclass
class ClusteringResult:
    clusters: ClusterSet
    eps: float
    warning: str | None
    pre_filter: ClusterSet
    dropped_clusters: tuple[str, ...] = ()

    def meta(self) -> dict:
        return {
            "eps": float(f"{self.eps:.9g}"),
            "warning": self.warning,
            "dropped_clusters": list(self.dropped_clusters),
        }


def cluster_embeddings(
    emb: EmbeddingSet,
    confidence: Mapping[str, float],
    config: ClusterConfig = ClusterConfig(),
) -> ClusteringResult:
    """Search eps, cluster, score members, eject outliers, drop weak clusters, merge.

    A member's score is its detection confidence times the squared-exponential
    kernel of its distance to the cluster's coordinate-wise median. Members
    below their cluster's ``Q25 - lambda2 * IQR`` become noise. A cluster whose
    mean score falls below the same threshold taken over all retained member
    scores is dropped as low-confidence.
    """
    ids = list(emb.ids)
    if not ids:
        empty = ClusterSet()
        return ClusteringResult(empty, config.eps_hi, "empty input", empty)
    X = normalize_rows(emb.matrix)
    search = search_epsilon(X, config, ids)
    pre = labels_to_clusterset(search.labels, ids, X)
    index = {pid: k for k, pid in enumerate(ids)}

    kept: list[Cluster] = []
    noise = list(pre.noise)
    for c in pre.clusters:
        pts = X[[index[m] for m in c.members]]
        mu = np.median(pts, axis=0)
        scores = [confidence_score(confidence.get(m, 1.0), x, mu, config.lambda1) for m, x in zip(c.members, pts)]
        retained, ejected = filter_outliers(scores, config.lambda2)
        noise.extend(c.members[i] for i in ejected)
        members = tuple(c.members[i] for i in retained)
        kept.append(Cluster(c.cluster_id, members, members[0], tuple(scores[i] for i in retained)))

    dropped: list[str] = []
    if len(kept) >= 2:
        # a cluster is low-confidence when its mean score is an outlier of all member scores
        pooled = [s for c in kept for s in c.scores]
        thr = outlier_threshold(pooled, config.lambda2)
        weak = [i for i, c in enumerate(kept) if float(np.mean(c.scores)) < thr]
        dropped = [kept[i].cluster_id for i in weak]
        for i in weak:
            noise.extend(kept[i].members)
        kept = [c for i, c in enumerate(kept) if i not in set(weak)]

    staged = ClusterSet(tuple(kept), tuple(sorted(noise)))
    merged = merge_clusters(staged, emb, config.merge_similarity)
    merged.check_partition(ids)
    return ClusteringResult(merged, search.eps, search.warning, pre, tuple(dropped))
