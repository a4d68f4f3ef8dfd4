"""Base vs refined embedding space on a synthetic scene."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import classify
from .cluster import ClusterConfig, cluster_embeddings, normalize_rows, silhouette
from .dictionary import build_dictionary
from .metrics import clusters_per_character, contingency_from_assignment, majority_labels, purity
from .model import ClusterSet, EmbeddingSet
from .selfsup import RefineConfig, project, refine, sample_triplets
from .synthgen import SceneSpec, SyntheticScene, generate
from .tracker import TrackerConfig, track


def benchmark_cluster_config(num_identities: int, **overrides) -> ClusterConfig:
    """Cluster-count search range suited to a scene with ``num_identities`` characters."""
    k_min = max(2, num_identities - 2)
    k_max = max(k_min, math.ceil(1.5 * num_identities))
    return ClusterConfig(**{"k_min": k_min, "k_max": k_max, **overrides})


@dataclass(frozen=True)
class SpaceScores:
    silhouette: float
    purity: float
    clusters: int
    noise: int
    clusters_per_character: float
    eps: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def clustering_silhouette(emb: EmbeddingSet, clusters: ClusterSet) -> float:
    """Silhouette of the final clustering (noise excluded) in normalized space."""
    index = {pid: k for k, pid in enumerate(emb.ids)}
    labels = np.full(len(emb), -1)
    for k, c in enumerate(clusters.clusters):
        labels[[index[m] for m in c.members]] = k
    return silhouette(normalize_rows(emb.matrix), labels)


def score_space(emb: EmbeddingSet, scene: SyntheticScene, config: ClusterConfig) -> SpaceScores:
    conf = {p.proposal_id: p.confidence for p in scene.proposals}
    result = cluster_embeddings(emb, conf, config)
    assignment = result.clusters.assignment()
    truth = {pid: scene.labels[pid] for pid in assignment}
    return SpaceScores(
        silhouette=clustering_silhouette(emb, result.clusters),
        purity=purity(contingency_from_assignment(assignment, truth)),
        clusters=len(result.clusters.clusters),
        noise=len(result.clusters.noise),
        clusters_per_character=clusters_per_character(assignment, scene.labels).median,
        eps=result.eps,
    )


@dataclass(frozen=True)
class BenchmarkRun:
    seed: int
    base: SpaceScores
    refined: SpaceScores
    tracklets: int
    triplets: int
    loss_curve: tuple[float, ...]


def run_benchmark(
    spec: SceneSpec,
    tracker: TrackerConfig = TrackerConfig(),
    refine_config: RefineConfig | None = None,
    cluster_config: ClusterConfig | None = None,
) -> BenchmarkRun:
    """Generate, track, sample triplets, refine, then cluster both spaces."""
    scene = generate(spec)
    refine_config = refine_config or RefineConfig(rng_seed=spec.rng_seed)
    cluster_config = cluster_config or benchmark_cluster_config(spec.num_identities)
    tracklets = track(scene.proposals, scene.embeddings, scene.geometry, tracker)
    triplets = sample_triplets(tracklets, scene.proposals, refine_config.num_triplets, spec.rng_seed)
    result = refine(scene.embeddings, triplets, refine_config)
    return BenchmarkRun(
        seed=spec.rng_seed,
        base=score_space(scene.embeddings, scene, cluster_config),
        refined=score_space(result.embeddings, scene, cluster_config),
        tracklets=len(tracklets),
        triplets=len(triplets),
        loss_curve=tuple(result.loss_curve),
    )


@dataclass(frozen=True)
class DesignRun:
    seed: int
    per_character: classify.Evaluation
    per_cluster: classify.Evaluation
    comparison: classify.DesignComparison
    train_proposals: int
    test_proposals: int


def run_design_comparison(
    spec: SceneSpec,
    tracker: TrackerConfig = TrackerConfig(),
    refine_config: RefineConfig | None = None,
    cluster_config: ClusterConfig | None = None,
    reject_threshold: float = 0.5,
) -> DesignRun:
    """Per-character vs per-cluster classifiers on one synthetic scene.

    Even-indexed shots build the dictionary (named by the majority ground
    truth of each cluster) and train both designs; odd-indexed shots are the
    test set, with false positives expected as ``unknown``.
    """
    scene = generate(spec)
    refine_config = refine_config or RefineConfig(rng_seed=spec.rng_seed)
    cluster_config = cluster_config or benchmark_cluster_config(spec.num_identities)
    train_shots = {s.shot_id for k, s in enumerate(scene.shots) if k % 2 == 0}
    train_props = [p for p in scene.proposals if p.shot_id in train_shots]
    test_ids = [p.proposal_id for p in scene.proposals if p.shot_id not in train_shots]
    train_emb = scene.embeddings.subset([p.proposal_id for p in train_props])

    tracklets = track(train_props, train_emb, scene.geometry, tracker)
    triplets = sample_triplets(tracklets, train_props, refine_config.num_triplets, spec.rng_seed)
    result = refine(train_emb, triplets, refine_config)
    conf = {p.proposal_id: p.confidence for p in train_props}
    clusters = cluster_embeddings(result.embeddings, conf, cluster_config).clusters
    majority = majority_labels(clusters.assignment(), scene.labels)
    entries = []
    for e in build_dictionary(clusters, result.embeddings):
        name = majority.get(e.cluster_id)
        entries.append(dataclasses.replace(e, name=name, discarded=name is None))
    negatives = project(scene.negatives, result.head)
    test_X = project(scene.embeddings.subset(test_ids), result.head).matrix
    truth = [scene.labels[pid] or classify.UNKNOWN for pid in test_ids]

    evals = {}
    for design in (classify.Design.PER_CHARACTER, classify.Design.PER_CLUSTER):
        data = classify.assemble_training_set(entries, clusters, result.embeddings, negatives, design)
        evals[design] = classify.evaluate(classify.train(data, reject_threshold), test_X, truth)
    a, b = evals[classify.Design.PER_CHARACTER], evals[classify.Design.PER_CLUSTER]
    return DesignRun(spec.rng_seed, a, b, classify.compare_designs(a, b), len(train_props), len(test_ids))
