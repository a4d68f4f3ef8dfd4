"""Per-shot multi-object tracking as unit-capacity min-cost flow.

Each proposal becomes an ``in`` and an ``out`` node joined by an observation
edge. Link edges join ``out`` of an earlier proposal to ``in`` of a later one
when the frame gap is within the skip window; a source feeds every ``in`` and
every ``out`` drains to the sink. Tracks are read off as source-to-sink
paths, extracted greedily by repeated DAG shortest paths (default) or from an
exact successive-shortest-path flow.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import IntegrityError, MissingEmbeddingError
from .model import EmbeddingSet, FrameGeometry, Proposal, Tracklet, group_by_shot

PAPER_WEIGHTS = (1.0, 1.5, 1.5, 2.0, 3.5, 4.5)
CONFIDENCE_CLAMP = 1e-6


@dataclass(frozen=True)
class TrackerConfig:
    """Tracker knobs.

    Attributes:
        factor_weights: exponents of the six link factors (time gap, IoU,
            scale ratio, center distance, semantic similarity, scale-weighted
            center distance).
        skip_window_frames: longest frame gap a link may bridge. ``None``
            means ``round(sample_fps)``.
        significance_fraction: tracklets below this fraction of the shot's
            most significant tracklet are dropped.
        entry_exit_cost: cost of each source->in and out->sink edge.
        min_link_likelihood: floor applied to every factor before aggregation.
        method: ``"flow"`` (optimal flow by successive shortest paths on the
            residual network, then greedy path decomposition; the default) or
            ``"greedy"`` (repeated DAG shortest path with node removal, which
            can grab detections that belong to a later track).
        significance: ``"per_detection"`` scores a tracklet by ``exp(-cost / length)``
            (geometric mean over its detections); ``"total"`` uses ``exp(-cost)``.
            Either score is divided by the shot maximum.
    """

    factor_weights: tuple[float, ...] = PAPER_WEIGHTS
    skip_window_frames: int | None = None
    significance_fraction: float = 0.10
    entry_exit_cost: float = 2.0
    min_link_likelihood: float = 1e-4
    method: str = "flow"
    significance: str = "per_detection"

    def __post_init__(self):
        object.__setattr__(self, "factor_weights", tuple(float(w) for w in self.factor_weights))
        if len(self.factor_weights) != 6 or any(w <= 0 for w in self.factor_weights):
            raise IntegrityError("factor_weights must be six strictly positive reals")
        if not 0.0 < self.significance_fraction <= 1.0:
            raise IntegrityError("significance_fraction must lie in (0, 1]")
        if self.entry_exit_cost < 0:
            raise IntegrityError("entry_exit_cost must be >= 0")
        if not 0.0 < self.min_link_likelihood < 1.0:
            raise IntegrityError("min_link_likelihood must lie in (0, 1)")
        if self.skip_window_frames is not None and self.skip_window_frames < 1:
            raise IntegrityError("skip_window_frames must be >= 1")
        if self.method not in ("greedy", "flow"):
            raise IntegrityError(f"unknown tracking method {self.method!r}")
        if self.significance not in ("per_detection", "total"):
            raise IntegrityError(f"unknown significance mode {self.significance!r}")

    def skip_window(self, sample_fps: float) -> int:
        if self.skip_window_frames is not None:
            return int(self.skip_window_frames)
        return max(1, int(math.floor(sample_fps + 0.5)))


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def link_factors(
    a: Proposal,
    b: Proposal,
    emb: EmbeddingSet,
    geometry: FrameGeometry,
    min_link_likelihood: float = 1e-4,
) -> tuple[float, ...]:
    """The six match factors for linking ``a`` to a later ``b``, each in ``(0, 1]``."""
    if a.frame_index >= b.frame_index:
        raise IntegrityError("link_factors needs a.frame_index < b.frame_index")
    if a.shot_id != b.shot_id:
        raise IntegrityError("link_factors needs both proposals in one shot")
    va, vb = emb.vector(a.proposal_id), emb.vector(b.proposal_id)

    gap = b.frame_index - a.frame_index
    (ax, ay), (bx, by) = a.box.center, b.box.center
    center_dist = math.hypot(ax - bx, ay - by)
    area_a, area_b = a.box.area, b.box.area

    f_time = math.exp(-(gap - 1) / geometry.sample_fps)
    f_iou = 0.5 * (a.box.iou(b.box) + 1.0)
    f_scale = min(area_a, area_b) / max(area_a, area_b)
    f_center = math.exp(-center_dist / geometry.diagonal)
    f_semantic = 0.5 * (_cosine(va, vb) + 1.0)
    f_scaled_center = math.exp(-center_dist / math.sqrt(max(area_a, area_b)))
    raw = (f_time, f_iou, f_scale, f_center, f_semantic, f_scaled_center)
    return tuple(min(1.0, max(min_link_likelihood, f)) for f in raw)


def link_likelihood(factors: Sequence[float], weights: Sequence[float] = PAPER_WEIGHTS) -> float:
    """Weighted geometric mean ``(prod f_i^w_i)^(1 / sum w_i)``."""
    if len(factors) != len(weights):
        raise IntegrityError("factors and weights differ in length")
    if any(f <= 0 for f in factors):
        raise IntegrityError("link factors must be > 0 (clamp upstream)")
    if any(w <= 0 for w in weights):
        raise IntegrityError("weights must be > 0")
    total = math.fsum(weights)
    return math.exp(math.fsum(w * math.log(f) for f, w in zip(factors, weights)) / total)


def observation_cost(confidence: float) -> float:
    """Negative log-odds of a true detection; negative when confidence > 0.5."""
    c = min(max(confidence, CONFIDENCE_CLAMP), 1.0 - CONFIDENCE_CLAMP)
    return math.log1p(-c) - math.log(c)


@dataclass
class FlowGraph:
    """Detection network for one shot.

    Node numbering: 0 = source, 1 = sink, ``2 + 2k`` = in-node of proposal
    ``k`` and ``3 + 2k`` = its out-node, with proposals sorted by
    ``(frame_index, proposal_id)`` so that node order is topological.
    """

    proposals: tuple[Proposal, ...]
    observation: tuple[float, ...]
    entry_cost: float
    exit_cost: float
    links: tuple[tuple[tuple[int, float], ...], ...]
    skip_window: int

    SOURCE = 0
    SINK = 1

    @staticmethod
    def in_node(k: int) -> int:
        return 2 + 2 * k

    @staticmethod
    def out_node(k: int) -> int:
        return 3 + 2 * k

    @property
    def num_nodes(self) -> int:
        return 2 + 2 * len(self.proposals) if self.proposals else 0

    @property
    def edges(self) -> list[tuple[int, int, float, int]]:
        """All edges as ``(tail, head, cost, capacity)``."""
        out = []
        for k in range(len(self.proposals)):
            out.append((self.SOURCE, self.in_node(k), self.entry_cost, 1))
            out.append((self.in_node(k), self.out_node(k), self.observation[k], 1))
            out.append((self.out_node(k), self.SINK, self.exit_cost, 1))
            for j, cost in self.links[k]:
                out.append((self.out_node(k), self.in_node(j), cost, 1))
        return out

    @property
    def num_link_edges(self) -> int:
        return sum(len(l) for l in self.links)


def build_graph(
    proposals: Sequence[Proposal],
    emb: EmbeddingSet,
    geometry: FrameGeometry,
    config: TrackerConfig = TrackerConfig(),
) -> FlowGraph:
    """Build the detection flow network of one shot."""
    props = tuple(sorted(proposals, key=lambda p: (p.frame_index, p.proposal_id)))
    window = config.skip_window(geometry.sample_fps)
    if len({p.shot_id for p in props}) > 1:
        raise IntegrityError("build_graph expects the proposals of a single shot")
    for p in props:
        emb.vector(p.proposal_id)
    observation = tuple(observation_cost(p.confidence) for p in props)
    links = []
    for k, a in enumerate(props):
        row = []
        for j in range(k + 1, len(props)):
            b = props[j]
            gap = b.frame_index - a.frame_index
            if gap < 1:
                continue
            if gap > window:
                break
            factors = link_factors(a, b, emb, geometry, config.min_link_likelihood)
            row.append((j, -math.log(link_likelihood(factors, config.factor_weights))))
        links.append(tuple(row))
    return FlowGraph(
        props, observation, config.entry_exit_cost, config.entry_exit_cost, tuple(links), window
    )


@dataclass(frozen=True)
class TrackPath:
    """A source-to-sink path: proposal indices into ``FlowGraph.proposals`` and its cost."""

    nodes: tuple[int, ...]
    cost: float


def path_cost(graph: FlowGraph, nodes: Sequence[int]) -> float:
    """Cost of the source-to-sink path visiting proposals ``nodes`` in order."""
    cost = graph.entry_cost + graph.exit_cost
    link = {(k, j): c for k, row in enumerate(graph.links) for j, c in row}
    for a, b in zip(nodes, nodes[1:]):
        if (a, b) not in link:
            raise IntegrityError(f"no link edge {a}->{b}")
    total = [cost] + [graph.observation[k] for k in nodes] + [link[(a, b)] for a, b in zip(nodes, nodes[1:])]
    return math.fsum(total)


def greedy_paths(graph: FlowGraph) -> list[TrackPath]:
    """Repeatedly take the cheapest source-to-sink path while it has negative cost.

    Each round runs one backward relaxation over the topologically ordered
    remaining nodes; ties prefer the lexicographically smallest proposal_id
    sequence. Nodes of an accepted path are removed before the next round.
    """
    n = len(graph.proposals)
    ids = [p.proposal_id for p in graph.proposals]
    alive = [True] * n
    found: list[TrackPath] = []
    while True:
        best: list[tuple[float, tuple[str, ...], tuple[int, ...]] | None] = [None] * n
        for k in range(n - 1, -1, -1):
            if not alive[k]:
                continue
            cand = (graph.exit_cost, (), ())
            for j, cost in graph.links[k]:
                bj = best[j]
                if bj is None:
                    continue
                option = (cost + bj[0], bj[1], bj[2])
                if (option[0], option[1]) < (cand[0], cand[1]):
                    cand = option
            best[k] = (graph.observation[k] + cand[0], (ids[k],) + cand[1], (k,) + cand[2])
        start = None
        for k in range(n):
            if best[k] is None:
                continue
            option = (graph.entry_cost + best[k][0], best[k][1], best[k][2])
            if start is None or (option[0], option[1]) < (start[0], start[1]):
                start = option
        if start is None or not start[0] < 0.0:
            return found
        found.append(TrackPath(start[2], path_cost(graph, start[2])))
        for k in start[2]:
            alive[k] = False


def flow_paths(graph: FlowGraph) -> list[TrackPath]:
    """Exact min-cost flow by successive shortest paths, then path decomposition.

    Augments one unit at a time along the cheapest residual source-to-sink
    path (Bellman-Ford/SPFA, negative residual costs allowed) while that path
    has negative cost. Because every edge has unit capacity the final flow is
    integral and decomposes into vertex-disjoint paths.
    """
    n = len(graph.proposals)
    if n == 0:
        return []
    num = graph.num_nodes
    # residual graph: edge arrays with paired reverse edges
    head, cost, cap, adj = [], [], [], [[] for _ in range(num)]

    def add(u: int, v: int, c: float) -> None:
        adj[u].append(len(head))
        head.append(v), cost.append(c), cap.append(1)
        adj[v].append(len(head))
        head.append(u), cost.append(-c), cap.append(0)

    for u, v, c, _ in graph.edges:
        add(u, v, c)

    src, sink = FlowGraph.SOURCE, FlowGraph.SINK
    while True:
        dist = [math.inf] * num
        pred = [-1] * num
        in_queue = [False] * num
        dist[src] = 0.0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            in_queue[u] = False
            for e in adj[u]:
                if cap[e] <= 0:
                    continue
                v = head[e]
                nd = dist[u] + cost[e]
                if nd < dist[v] - 1e-12:
                    dist[v] = nd
                    pred[v] = e
                    if not in_queue[v]:
                        in_queue[v] = True
                        queue.append(v)
        if not dist[sink] < -1e-12:
            break
        v = sink
        while v != src:
            e = pred[v]
            cap[e] -= 1
            cap[e ^ 1] += 1
            v = head[e ^ 1]

    # forward edges are even-numbered; flow on them = 1 - cap
    succ: dict[int, int] = {}
    for u in range(1, num):
        for e in adj[u]:
            if e % 2 == 0 and cap[e] == 0:
                succ[u] = head[e]
    starts = [head[e] for e in adj[src] if e % 2 == 0 and cap[e] == 0]
    paths = []
    for node in starts:
        seq = []
        while node != sink:
            if node % 2 == 0:
                seq.append((node - 2) // 2)
            node = succ[node]
        paths.append(TrackPath(tuple(seq), path_cost(graph, seq)))
    paths.sort(key=lambda p: (p.cost, [graph.proposals[k].proposal_id for k in p.nodes]))
    return paths


def extract_tracklets(graph: FlowGraph, config: TrackerConfig = TrackerConfig()) -> list[Tracklet]:
    """Turn the shot's flow into significance-filtered tracklets.

    Significance is ``exp(-cost / length)`` (or ``exp(-cost)`` in ``"total"``
    mode) divided by the shot maximum, so the best tracklet scores 1;
    tracklets below ``significance_fraction`` are dropped.
    """
    if not graph.proposals:
        return []
    paths = greedy_paths(graph) if config.method == "greedy" else flow_paths(graph)
    if not paths:
        return []
    if config.significance == "total":
        scores = [-p.cost for p in paths]
    else:
        scores = [-p.cost / len(p.nodes) for p in paths]
    best = max(scores)
    shot_id = graph.proposals[0].shot_id
    out = []
    for path, score in zip(paths, scores):
        significance = math.exp(score - best)
        if significance < config.significance_fraction:
            continue
        members = [graph.proposals[k] for k in path.nodes]
        out.append(
            Tracklet(
                tracklet_id=f"{shot_id}/t{len(out)}",
                shot_id=shot_id,
                proposal_ids=tuple(p.proposal_id for p in members),
                frame_indices=tuple(p.frame_index for p in members),
                significance=significance,
            )
        )
    return out


def track_shot(
    proposals: Sequence[Proposal],
    emb: EmbeddingSet,
    geometry: FrameGeometry,
    config: TrackerConfig = TrackerConfig(),
) -> list[Tracklet]:
    return extract_tracklets(build_graph(proposals, emb, geometry, config), config)


def track(
    proposals: Sequence[Proposal],
    emb: EmbeddingSet,
    geometry: FrameGeometry,
    config: TrackerConfig = TrackerConfig(),
) -> list[Tracklet]:
    """Track every shot independently; shots are visited by first frame, then id."""
    shots = group_by_shot(proposals)
    order = sorted(shots, key=lambda s: (shots[s][0].frame_index, s))
    out: list[Tracklet] = []
    for shot_id in order:
        out.extend(track_shot(shots[shot_id], emb, geometry, config))
    return out


__all__ = [
    "FlowGraph",
    "MissingEmbeddingError",
    "PAPER_WEIGHTS",
    "TrackPath",
    "TrackerConfig",
    "build_graph",
    "extract_tracklets",
    "flow_paths",
    "greedy_paths",
    "link_factors",
    "link_likelihood",
    "observation_cost",
    "path_cost",
    "track",
    "track_shot",
]
