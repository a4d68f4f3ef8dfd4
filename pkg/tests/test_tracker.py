import itertools
import math
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import best_disjoint_paths

from castid.errors import IntegrityError, MissingEmbeddingError
from castid.model import BoundingBox, EmbeddingSet, FrameGeometry, Proposal
from castid.tracker import (
    PAPER_WEIGHTS,
    TrackerConfig,
    build_graph,
    extract_tracklets,
    flow_paths,
    greedy_paths,
    link_factors,
    link_likelihood,
    track,
)

GEOM = FrameGeometry(1280, 720, 4)


def prop(pid, frame, x=100, y=100, w=100, h=100, conf=0.99, shot="s0"):
    return Proposal(pid, "v", frame, shot, BoundingBox(x, y, w, h), conf)


def emb_of(mapping):
    return EmbeddingSet.from_mapping(mapping)


def test_identical_adjacent_all_ones():
    a, b = prop("a", 0), prop("b", 1)
    emb = emb_of({"a": [1, 0], "b": [1, 0]})
    assert link_factors(a, b, emb, GEOM) == (1, 1, 1, 1, 1, 1)


def test_disjoint_boxes_iou_factor():
    a, b = prop("a", 0), prop("b", 1, x=500)
    f = link_factors(a, b, emb_of({"a": [1, 0], "b": [1, 0]}), GEOM)
    assert f[1] == 0.5


def test_scale_factor():
    a, b = prop("a", 0, w=10, h=10), prop("b", 1, w=20, h=20)
    f = link_factors(a, b, emb_of({"a": [1, 0], "b": [1, 0]}), GEOM)
    assert f[2] == pytest.approx(0.25, abs=1e-12)


def test_missing_embedding():
    with pytest.raises(MissingEmbeddingError):
        link_factors(prop("a", 0), prop("b", 1), emb_of({"a": [1.0]}), GEOM)


def test_order_required():
    emb = emb_of({"a": [1.0], "b": [1.0]})
    with pytest.raises(IntegrityError):
        link_factors(prop("a", 1), prop("b", 1), emb, GEOM)


def test_likelihood_examples():
    assert link_likelihood([1] * 6) == 1.0
    expected = float((Decimal("0.75").ln() * Decimal("1.5") / Decimal(14)).exp())
    assert link_likelihood((1, 0.75, 1, 1, 1, 1), PAPER_WEIGHTS) == pytest.approx(expected, abs=1e-12)
    assert round(expected, 5) == 0.96965
    assert link_likelihood((1e-300, 1, 1, 1, 1, 1)) < 1e-20
    with pytest.raises(IntegrityError):
        link_likelihood((0, 1, 1, 1, 1, 1))


factors6 = st.lists(st.floats(1e-6, 1.0), min_size=6, max_size=6)
weights6 = st.lists(st.floats(0.1, 10.0), min_size=6, max_size=6)


@given(factors6, weights6, st.floats(0.01, 100))
def test_likelihood_weight_scale_invariant(f, w, c):
    assert link_likelihood(f, w) == pytest.approx(link_likelihood(f, [c * x for x in w]), rel=1e-9)


@given(factors6, weights6, st.integers(0, 5), st.floats(1.0, 5.0))
def test_likelihood_monotone(f, w, i, boost):
    g = list(f)
    g[i] = min(1.0, g[i] * boost)
    assert link_likelihood(g, w) >= link_likelihood(f, w) - 1e-15


def test_graph_counts():
    emb = emb_of({"a": [1.0], "b": [1.0], "c": [1.0]})
    g = build_graph([prop("a", 0)], emb, GEOM)
    assert g.num_nodes == 4 and len(g.edges) == 3
    g = build_graph([prop("a", 0), prop("b", 1)], emb, GEOM)
    assert g.num_link_edges == 1
    g = build_graph([prop("a", 0), prop("c", 6)], emb, GEOM)
    assert g.skip_window == 4 and g.num_link_edges == 0
    g = build_graph([prop("a", 0), prop("c", 6)], emb, GEOM, TrackerConfig(skip_window_frames=6))
    assert g.num_link_edges == 1


def test_graph_is_forward_only():
    rng = np.random.default_rng(0)
    props = [prop(f"p{k}", int(rng.integers(0, 8))) for k in range(12)]
    emb = emb_of({p.proposal_id: rng.normal(size=3) for p in props})
    g = build_graph(props, emb, GEOM)
    for u, v, _, cap in g.edges:
        assert cap == 1
        if u >= 2 and u % 2 == 1 and v >= 2:
            a, b = g.proposals[(u - 3) // 2], g.proposals[(v - 2) // 2]
            assert 1 <= b.frame_index - a.frame_index <= g.skip_window


def test_empty_shot():
    g = build_graph([], emb_of({"a": [1.0]}), GEOM)
    assert g.num_nodes == 0 and extract_tracklets(g) == []


def test_single_confident_pair():
    emb = emb_of({"a": [1, 0], "b": [1, 0]})
    for method in ("greedy", "flow"):
        cfg = TrackerConfig(method=method)
        (t,) = extract_tracklets(build_graph([prop("a", 0), prop("b", 1)], emb, GEOM, cfg), cfg)
        assert t.proposal_ids == ("a", "b") and t.significance == 1.0


def crossing_scene():
    """Two characters swap sides over three frames."""
    xs = {"A": [100, 400, 700], "B": [700, 400, 100]}
    props, vecs, truth = [], {}, {}
    for who, path in xs.items():
        for f, x in enumerate(path):
            pid = f"{who}{f}"
            props.append(prop(pid, f, x=x, y=300 if who == "A" else 320, w=120, h=200, conf=0.9))
            vecs[pid] = [1.0, 0.05 * f] if who == "A" else [0.05 * f, 1.0]
            truth[pid] = who
    return props, emb_of(vecs), truth


@pytest.mark.parametrize("method", ["greedy", "flow"])
def test_crossing_matches_identities(method):
    props, emb, truth = crossing_scene()
    cfg = TrackerConfig(method=method)
    g = build_graph(props, emb, GEOM, cfg)
    best, _ = best_disjoint_paths(g)
    paths = greedy_paths(g) if method == "greedy" else flow_paths(g)
    assert math.fsum(p.cost for p in paths) == pytest.approx(best, abs=1e-9)
    tracklets = extract_tracklets(g, cfg)
    assert len(tracklets) == 2
    for t in tracklets:
        assert len(t) == 3 and len({truth[p] for p in t.proposal_ids}) == 1


def random_shot(rng, n):
    props, vecs = [], {}
    for k in range(n):
        pid = f"p{k}"
        props.append(prop(pid, int(rng.integers(0, 4)), x=rng.uniform(0, 1000), y=rng.uniform(0, 500),
                          w=rng.uniform(60, 200), h=rng.uniform(60, 200), conf=rng.uniform(0.3, 0.99)))
        vecs[pid] = rng.normal(size=4)
    return props, emb_of(vecs)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 7))
def test_flow_is_optimal_and_greedy_never_better(seed, n):
    props, emb = random_shot(np.random.default_rng(seed), n)
    g = build_graph(props, emb, GEOM)
    best, _ = best_disjoint_paths(g)
    flow = math.fsum(p.cost for p in flow_paths(g))
    greedy = math.fsum(p.cost for p in greedy_paths(g))
    assert flow == pytest.approx(best, abs=1e-9)
    assert greedy >= best - 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["greedy", "flow"]))
def test_tracklet_invariants(seed, method):
    rng = np.random.default_rng(seed)
    props, emb = random_shot(rng, 14)
    cfg = TrackerConfig(method=method)
    out = track(props, emb, GEOM, cfg)
    used = [pid for t in out for pid in t.proposal_ids]
    assert len(used) == len(set(used))
    for t in out:
        assert len(set(t.frame_indices)) == len(t)
        assert t.max_gap() <= cfg.skip_window(GEOM.sample_fps)
        assert cfg.significance_fraction <= t.significance <= 1.0
    assert out == track(props, emb, GEOM, cfg)


def test_total_significance_mode():
    props, emb, _ = crossing_scene()
    cfg = TrackerConfig(significance="total")
    out = track(props, emb, GEOM, cfg)
    assert max(t.significance for t in out) == 1.0


def test_config_validation():
    with pytest.raises(IntegrityError):
        TrackerConfig(factor_weights=(1, 1, 1, 1, 1, 0))
    with pytest.raises(IntegrityError):
        TrackerConfig(significance_fraction=0)
    with pytest.raises(IntegrityError):
        TrackerConfig(method="lp")
    assert TrackerConfig().skip_window(4.0) == 4 and TrackerConfig().skip_window(2.5) == 3


def test_brute_force_oracle_enumerates_all_sets():
    # the oracle's optimum equals a naive enumeration over all path sets
    props, emb = random_shot(np.random.default_rng(11), 5)
    g = build_graph(props, emb, GEOM)
    link = {(k, j) for k, row in enumerate(g.links) for j, _ in row}
    paths = [seq for r in range(1, 6) for seq in itertools.permutations(range(5), r)
             if all((a, b) in link for a, b in zip(seq, seq[1:]))]
    from castid.tracker import path_cost

    best = 0.0
    for r in range(1, 4):
        for combo in itertools.combinations(paths, r):
            nodes = [k for p in combo for k in p]
            if len(nodes) == len(set(nodes)):
                best = min(best, math.fsum(path_cost(g, p) for p in combo))
    assert best_disjoint_paths(g)[0] == pytest.approx(best, abs=1e-9)
