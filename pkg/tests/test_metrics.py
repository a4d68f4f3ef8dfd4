import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import normalized_mutual_info_score

from castid.errors import CastError
from castid.metrics import (
    Contingency,
    class_purity,
    clusters_per_character,
    contingency_from_assignment,
    k_metric,
    nmi,
    purity,
)

FIXTURE = Contingency(np.array([[3, 2, 0], [0, 1, 4]]))


def test_purity_examples():
    assert purity(Contingency(np.eye(3, dtype=int) * 4)) == 1.0
    assert abs(purity(FIXTURE) - 0.9) < 1e-9
    assert purity(Contingency(np.array([[5], [5]]))) == 0.5


def test_k_metric_examples():
    assert k_metric(Contingency(np.eye(2, dtype=int))) == 1.0
    assert abs(class_purity(FIXTURE) - 0.7) < 1e-9
    assert abs(k_metric(FIXTURE) - math.sqrt(0.63)) < 1e-9
    assert k_metric(Contingency(np.array([[7]]))) == 1.0


def test_nmi_examples():
    assert nmi(Contingency(np.eye(3, dtype=int) * 2)) == pytest.approx(1.0, abs=1e-12)
    assert abs(nmi(Contingency(np.full((2, 3), 4)))) < 1e-12
    # [[4,1],[1,4]]: uniform marginals, so H = ln 2 on both sides
    p = np.array([[4, 1], [1, 4]]) / 10
    mi = sum(p[i, j] * math.log(p[i, j] / 0.25) for i in range(2) for j in range(2))
    expected = mi / math.log(2)
    assert abs(nmi(Contingency(np.array([[4, 1], [1, 4]]))) - expected) < 1e-9
    assert nmi(Contingency(np.array([[6]]))) == 1.0


def test_empty_table():
    with pytest.raises(CastError):
        purity(Contingency(np.zeros((2, 2), dtype=int)))
    with pytest.raises(CastError):
        nmi(Contingency(np.zeros((1, 1), dtype=int)))


tables = st.integers(0, 2**31).map(
    lambda s: np.random.default_rng(s).integers(0, 6, size=tuple(np.random.default_rng(s + 1).integers(1, 5, size=2)))
).filter(lambda t: t.sum() > 0)


@given(tables, st.integers(0, 2**31))
def test_permutation_invariance(counts, seed):
    rng = np.random.default_rng(seed)
    shuffled = counts[rng.permutation(counts.shape[0])][:, rng.permutation(counts.shape[1])]
    a, b = Contingency(counts), Contingency(shuffled)
    assert purity(a) == pytest.approx(purity(b)) and k_metric(a) == pytest.approx(k_metric(b))


@given(tables)
def test_k_metric_sandwich_and_nmi_symmetry(counts):
    t = Contingency(counts)
    lo, hi = sorted((purity(t), class_purity(t)))
    assert lo - 1e-12 <= k_metric(t) <= hi + 1e-12
    assert nmi(t) == pytest.approx(nmi(Contingency(counts.T)), abs=1e-12)
    assert 0.0 <= nmi(t) <= 1.0


@given(st.lists(st.integers(0, 3), min_size=2, max_size=40), st.integers(0, 2**31))
def test_nmi_matches_sklearn(truth, seed):
    pred = list(np.random.default_rng(seed).integers(0, 3, size=len(truth)))
    if len(set(truth)) < 2 or len(set(pred)) < 2:
        return
    ours = nmi(Contingency.from_labels(truth, pred))
    ref = normalized_mutual_info_score(truth, pred, average_method="geometric")
    assert ours == pytest.approx(ref, abs=1e-9)


def test_clusters_per_character():
    truth = {f"p{k}": "A" if k < 6 else "B" for k in range(9)}
    pure = {f"p{k}": "c0" if k < 6 else "c1" for k in range(9)}
    assert clusters_per_character(pure, truth).median == 1
    split = {f"p{k}": f"c{k % 3}" if k < 6 else "c9" for k in range(9)}
    res = clusters_per_character(split, truth)
    assert res.per_character == {"A": 3, "B": 1} and res.median == 2.0


def test_clusters_per_character_mixed():
    truth = {"a1": "A", "a2": "A", "a3": "A", "b1": "B", "b2": "B", "n1": None, "n2": None}
    assign = {"a1": "x", "a2": "x", "b1": "x", "a3": "y", "b2": "y", "n1": "z", "n2": "z"}
    # x -> A; y ties A/B -> A; z -> non-character
    res = clusters_per_character(assign, truth)
    assert res.per_character == {"A": 2} and res.mean == 2.0


def test_contingency_from_assignment_skips_unlabelled():
    t = contingency_from_assignment({"a": "c0", "b": "c0", "z": "c1"}, {"a": "A", "b": None})
    assert t.total == 2 and set(t.classes) == {"A", "<none>"}
