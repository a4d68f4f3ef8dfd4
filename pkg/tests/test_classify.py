import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import precision_recall_fscore_support

from castid.classify import (
    BACKGROUND,
    UNKNOWN,
    Design,
    assemble_training_set,
    compare_designs,
    dense_labels,
    evaluate,
    frame_name_sets,
    load_dense_labels,
    load_model,
    predict,
    predict_many,
    save_dense_labels,
    save_model,
    score_predictions,
    screen_time,
    train,
)
from castid.errors import CastError
from castid.model import BoundingBox, Cluster, ClusterSet, DictionaryEntry, EmbeddingSet, Proposal

DIM = 4


def bob_fixture():
    """Bob appears as two clusters (two looks), Ann as one; e3 is discarded."""
    vecs = {
        "b1": [1, 0.1, 0, 0], "b2": [1, -0.1, 0, 0],
        "b3": [0, 0, 1, 0.1], "b4": [0, 0, 1, -0.1],
        "a1": [0.1, 1, 0, 0], "a2": [-0.1, 1, 0, 0],
        "x1": [0.5, 0.5, 0.5, 0.5],
    }
    emb = EmbeddingSet.from_mapping(vecs)
    clusters = ClusterSet((
        Cluster("c0", ("b1", "b2"), "b1"),
        Cluster("c1", ("b3", "b4"), "b3"),
        Cluster("c2", ("a1", "a2"), "a1"),
        Cluster("c3", ("x1",), "x1"),
    ))
    entries = [
        DictionaryEntry("e0", "c0", "b1", "Bob"),
        DictionaryEntry("e1", "c1", "b3", "Bob"),
        DictionaryEntry("e2", "c2", "a1", "Ann"),
        DictionaryEntry("e3", "c3", "x1", None, True),
    ]
    negatives = np.array([[0, 0, 0, 1.0], [0, 0, 0.1, 1.0]])
    return entries, clusters, emb, negatives


def test_per_character_merges_same_name():
    data = assemble_training_set(*bob_fixture(), design="per_character")
    assert data.classes() == ["Bob", "Ann", BACKGROUND]
    assert data.class_ids.count("Bob") == 4 and "x1" not in data.class_ids


def test_per_cluster_keeps_clusters_apart():
    data = assemble_training_set(*bob_fixture(), design=Design.PER_CLUSTER)
    assert data.classes() == ["Bob-1", "Bob-2", "Ann-1", BACKGROUND]
    assert data.name_mapping["Bob-1"] == data.name_mapping["Bob-2"] == "Bob"
    model = train(data)
    pred = predict(model, [0.05, 0.0, 1.0, 0.05])
    assert pred.name == "Bob" and pred.class_id == "Bob-2"


def test_discarded_entry_contributes_nothing():
    entries, clusters, emb, neg = bob_fixture()
    data = assemble_training_set(entries, clusters, emb, neg)
    assert len(data.class_ids) == 6 + 2


def test_no_named_entries():
    entries, clusters, emb, neg = bob_fixture()
    unnamed = [DictionaryEntry(e.entry_id, e.cluster_id, e.representative) for e in entries]
    with pytest.raises(CastError):
        assemble_training_set(unnamed, clusters, emb, neg)


def test_one_example_centroid_is_example():
    emb = EmbeddingSet.from_mapping({"p": [3.0, 4.0]})
    data = assemble_training_set([DictionaryEntry("e0", "c0", "p", "P")], ClusterSet((Cluster("c0", ("p",), "p"),)),
                                 emb, np.array([[0.0, 2.0]]))
    model = train(data)
    assert np.allclose(model.classes[0].centroid, [0.6, 0.8])
    assert np.allclose(model.classes[1].centroid, [0.0, 1.0])


def test_duplicates_do_not_move_centroid():
    entries, clusters, emb, neg = bob_fixture()
    a = train(assemble_training_set(entries, clusters, emb, neg))
    b = train(assemble_training_set(entries, clusters, emb, np.vstack([neg, neg, neg])))
    assert all(np.allclose(x.centroid, y.centroid) for x, y in zip(a.classes, b.classes))


def test_centroids_match_direct_means():
    from castid.classify import LabeledSet

    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, DIM))
    labels = tuple(rng.choice(["u", "v", BACKGROUND], size=30))
    data = LabeledSet(X, labels, {"u": "u", "v": "v", BACKGROUND: BACKGROUND}, Design.PER_CHARACTER)
    model = train(data)
    for c in model.classes:
        mean = X[np.array(labels) == c.class_id].mean(0)
        assert np.allclose(c.centroid, mean / np.linalg.norm(mean), atol=1e-9)


def test_train_needs_background_and_examples():
    from castid.classify import LabeledSet

    with pytest.raises(CastError):
        train(LabeledSet(np.ones((2, 2)), ("a", "a"), {"a": "a"}, Design.PER_CHARACTER))
    with pytest.raises(CastError):
        train(LabeledSet(np.ones((2, 2)), ("a", "a"), {"a": "a", "b": "b", BACKGROUND: BACKGROUND}, Design.PER_CHARACTER))


def test_predict_examples():
    model = train(assemble_training_set(*bob_fixture()))
    c = model.classes[1].centroid
    pred = predict(model, c)
    assert pred.name == "Ann" and pred.score == pytest.approx(1.0)
    # orthogonal to every character centroid and the background
    basis = np.vstack([cl.centroid for cl in model.classes])
    _, _, vt = np.linalg.svd(basis)
    orth = vt[-1] if basis.shape[0] < DIM else None
    if orth is not None:
        assert predict(model, orth).name == UNKNOWN
    assert predict(model, [0, 0, 0.05, 1]).name == UNKNOWN


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=DIM, max_size=DIM), st.floats(1e-3, 1e3))
def test_predict_scale_invariant(x, scale):
    model = train(assemble_training_set(*bob_fixture()))
    if np.linalg.norm(x) < 1e-6:
        return
    a, b = predict(model, x), predict(model, np.array(x) * scale)
    assert a.name == b.name and a.score == pytest.approx(b.score, abs=1e-9)


def one_cluster_per_name():
    entries, clusters, emb, neg = bob_fixture()
    entries = [entries[0], DictionaryEntry("e1", "c1", "b3", "Cy"), entries[2]]
    return entries, clusters, emb, neg


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_designs_agree_when_one_cluster_per_name(seed):
    fixture = one_cluster_per_name()
    a = train(assemble_training_set(*fixture, design="per_character"))
    b = train(assemble_training_set(*fixture, design="per_cluster"))
    X = np.random.default_rng(seed).normal(size=(50, DIM))
    assert [p.name for p in predict_many(a, X)] == [p.name for p in predict_many(b, X)]


HAND_TRUTH = ["A", "A", "A", "A", "B", "B", "B", UNKNOWN, UNKNOWN, UNKNOWN]
HAND_PRED = ["A", "A", "A", "B", "B", "B", UNKNOWN, UNKNOWN, "A", UNKNOWN]


def test_hand_fixture():
    ev = score_predictions(HAND_TRUTH, HAND_PRED)
    assert ev.confusion.tolist() == [[3, 1, 0], [0, 2, 1], [1, 0, 2]]
    assert ev.precision == pytest.approx((3 / 4 + 2 / 3 + 2 / 3) / 3)
    assert ev.recall == pytest.approx((3 / 4 + 2 / 3 + 2 / 3) / 3)
    assert ev.accuracy == pytest.approx(0.7)
    p, r, f, _ = precision_recall_fscore_support(HAND_TRUTH, HAND_PRED, average="macro", zero_division=0)
    assert (ev.precision, ev.recall, ev.f1) == pytest.approx((p, r, f))
    assert ev.confusion.sum(1).tolist() == [ev.support[k] for k in ev.labels]
    assert np.allclose(ev.normalized_confusion.sum(1), 1.0)


def test_perfect_and_all_unknown():
    ev = score_predictions(["A", "B", "B"], ["A", "B", "B"])
    assert (ev.precision, ev.recall, ev.accuracy, ev.f1) == (1, 1, 1, 1)
    assert np.array_equal(ev.confusion, np.diag([1, 2]))
    ev = score_predictions(["A", "B"], [UNKNOWN, UNKNOWN])
    assert ev.recall == 0.0
    with pytest.raises(CastError):
        score_predictions([], [])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("ABC"), st.sampled_from("ABCu")), min_size=1, max_size=40))
def test_evaluation_matches_sklearn(pairs):
    truth, pred = zip(*pairs)
    ev = score_predictions(list(truth), list(pred))
    labels = sorted(set(truth))
    p, r, f, _ = precision_recall_fscore_support(truth, pred, labels=labels, average="macro", zero_division=0)
    assert (ev.precision, ev.recall, ev.f1) == pytest.approx((p, r, f))
    assert ev.accuracy == pytest.approx(np.trace(ev.confusion) / len(truth))


def test_compare_designs():
    a = score_predictions(["A", "A", "B", "B", "C"], ["A", "B", "B", "B", "C"])
    b = score_predictions(["A", "A", "B", "B", "C"], ["A", "A", "B", "B", "A"])
    cmp = compare_designs(a, b)
    assert cmp.characters == ("A", "B", "C") and cmp.t_statistic is not None
    same = compare_designs(a, a)
    assert same.mean_difference == 0.0 and same.t_statistic is None


def test_evaluate_model():
    fixture = bob_fixture()
    model = train(assemble_training_set(*fixture))
    emb = fixture[2]
    ev = evaluate(model, emb.rows(["b1", "b3", "a1"]), ["Bob", "Bob", "Ann"])
    assert ev.accuracy == 1.0


def test_screen_time_examples():
    assert screen_time([{"A"}] * 5).per_name == {"A": 1.0}
    alt = screen_time([{"A"}, {"B"}] * 3)
    assert alt.per_name == {"A": 0.5, "B": 0.5}
    frames = [{"m1"}] * 50 + [{"m2"}] * 28 + [{"f1"}] * 22 + [{UNKNOWN}] * 7
    st_ = screen_time(frames, {"m1": "male", "m2": "male", "f1": "female"})
    assert abs(st_.per_group["male"] - 0.78) < 1e-9 and abs(st_.per_group["female"] - 0.22) < 1e-9
    assert UNKNOWN not in st_.per_name


def test_dense_labels_and_files(tmp_path):
    entries, clusters, emb, neg = bob_fixture()
    model = train(assemble_training_set(entries, clusters, emb, neg, "per_cluster"))
    props = [Proposal(pid, "v", k // 2, "s0", BoundingBox(0, 0, 10, 10), 0.9) for k, pid in enumerate(emb.ids)]
    labels = dense_labels(model, props, emb)
    assert [f["frame_index"] for f in labels] == [0, 1, 2, 3]
    assert frame_name_sets(labels)[0] == {"Bob"}
    save_dense_labels(tmp_path / "d.jsonl", labels)
    assert load_dense_labels(tmp_path / "d.jsonl") == labels
    save_model(tmp_path / "m.jsonl", model)
    back = load_model(tmp_path / "m.jsonl")
    assert back.design == model.design and back.name_mapping == model.name_mapping
    assert all(np.array_equal(x.centroid, y.centroid) for x, y in zip(back.classes, model.classes))
