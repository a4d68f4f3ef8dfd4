import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from castid.errors import IntegrityError
from castid.model import EmbeddingSet, SpaceTag, Tracklet, Triplet, triplet_violations
from castid.selfsup import (
    RefineConfig,
    head_loss_and_grad,
    head_losses,
    margin_violations,
    refine,
    sample_triplets,
    triplet_loss,
)
from castid.synthgen import SceneSpec, generate
from castid.tracker import track


def test_unique_triplet():
    tracklets = [Tracklet("T1", "s", ("p1", "p3"), (1, 2), 1.0), Tracklet("T2", "s", ("p2",), (1,), 1.0)]
    frames = {"p1": 1, "p3": 2, "p2": 1}
    out = sample_triplets(tracklets, frames, 25, seed=4)
    assert set(out) == {Triplet("p1", "p3", "p2")} and len(out) == 25


def test_single_tracklet_shots_give_nothing():
    tracklets = [Tracklet("a", "s0", ("p1", "p2"), (0, 1), 1.0), Tracklet("b", "s1", ("p3", "p4"), (5, 6), 1.0)]
    frames = {"p1": 0, "p2": 1, "p3": 5, "p4": 6}
    assert sample_triplets(tracklets, frames, 100) == []


def test_negative_n_rejected():
    with pytest.raises(IntegrityError):
        sample_triplets([], {}, -1)


def three_track_scene():
    tracklets, frames = [], {}
    for k in range(3):
        pids = tuple(f"t{k}f{f}" for f in range(6) if (f + k) % 4)
        fr = tuple(int(p.split("f")[1]) for p in pids)
        tracklets.append(Tracklet(f"T{k}", "s", pids, fr, 1.0))
        frames.update(zip(pids, fr))
    return tracklets, frames


def test_three_track_scene_all_valid():
    tracklets, frames = three_track_scene()
    tracklet_of = {p: t.tracklet_id for t in tracklets for p in t.proposal_ids}
    out = sample_triplets(tracklets, frames, 1000, seed=1)
    assert len(out) == 1000
    assert all(not triplet_violations(t, tracklet_of, frames) for t in out)


def test_shot_selection_uniform():
    # shot a has many eligible frames, shot b only one; shots must still be drawn equally
    ta = [Tracklet("a1", "a", tuple(f"a1_{f}" for f in range(8)), tuple(range(8)), 1.0),
          Tracklet("a2", "a", tuple(f"a2_{f}" for f in range(8)), tuple(range(8)), 1.0)]
    tb = [Tracklet("b1", "b", ("b1_20", "b1_21"), (20, 21), 1.0), Tracklet("b2", "b", ("b2_20",), (20,), 1.0)]
    frames = {p: f for t in ta + tb for p, f in zip(t.proposal_ids, t.frame_indices)}
    out = sample_triplets(ta + tb, frames, 20_000, seed=7)
    share = sum(t.anchor.startswith("a") for t in out) / len(out)
    assert abs(share - 0.5) <= 0.05 * 0.5


def test_sampling_deterministic():
    tracklets, frames = three_track_scene()
    assert sample_triplets(tracklets, frames, 50, seed=3) == sample_triplets(tracklets, frames, 50, seed=3)


def test_loss_examples():
    a = np.zeros(2)
    p = np.array([np.sqrt(0.2), 0.0])
    n = np.array([0.0, np.sqrt(0.9)])
    assert triplet_loss(a, p, n, 1.0) == pytest.approx(0.3, abs=1e-12)
    assert triplet_loss(a, a, [1.0, 0.5], 1.0) == 0.0
    assert triplet_loss(a, a, a, 0.7) == 0.7
    # a = n leaves d(a, p) + margin
    assert triplet_loss(a, [0.5, 0.0], a, 1.0) == pytest.approx(1.25)
    with pytest.raises(IntegrityError):
        triplet_loss([0, 0], [0, 0], [0, 0, 0])


def central_difference(W, A, P, N, margin, h=1e-6):
    G = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        G[idx] = (head_losses(Wp, A, P, N, margin).mean() - head_losses(Wm, A, P, N, margin).mean()) / (2 * h)
    return G


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8), st.integers(1, 8), st.integers(1, 6))
def test_gradient_matches_finite_differences(seed, d_in, d_out, batch):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(d_out, d_in))
    A, P, N = (rng.normal(size=(batch, d_in)) for _ in range(3))
    margin = 1.0
    loss, grad = head_loss_and_grad(W, A, P, N, margin)
    raw = head_losses(W, A, P, N, margin)
    # keep away from the hinge where the loss is not differentiable
    pre = ((A - P) @ W.T) ** 2
    hinge = pre.sum(1) - (((A - N) @ W.T) ** 2).sum(1) + margin
    if np.min(np.abs(hinge)) < 1e-3:
        return
    assert loss == pytest.approx(raw.mean())
    fd = central_difference(W, A, P, N, margin)
    scale = max(1.0, np.abs(fd).max())
    assert np.abs(grad - fd).max() / scale < 1e-4


def test_inactive_triplets_have_zero_gradient():
    W = np.eye(3)
    A = np.zeros((2, 3))
    P = A.copy()
    N = np.array([[5.0, 0, 0], [0, 4.0, 0]])
    loss, grad = head_loss_and_grad(W, A, P, N, 1.0)
    assert loss == 0.0 and not grad.any()


def small_emb(seed=0, n=12, d=4):
    rng = np.random.default_rng(seed)
    return EmbeddingSet([f"p{k}" for k in range(n)], rng.normal(size=(n, d)))


def test_zero_triplets_identity():
    emb = small_emb()
    out = refine(emb, [], RefineConfig())
    assert np.array_equal(out.embeddings.matrix, emb.matrix)
    assert out.embeddings.space_tag == SpaceTag.REFINED and out.loss_curve == []


def test_zero_learning_rate_identity():
    emb = small_emb()
    trips = [Triplet("p0", "p1", "p2"), Triplet("p3", "p4", "p5")]
    out = refine(emb, trips, RefineConfig(learning_rate=0.0, epochs=3))
    assert np.array_equal(out.embeddings.matrix, emb.matrix)


def test_output_dimension_truncates():
    emb = small_emb(d=5)
    out = refine(emb, [Triplet("p0", "p1", "p2")], RefineConfig(output_dimension=3, epochs=1))
    assert out.embeddings.dimension == 3 and out.head.shape == (3, 5)


def test_config_validation():
    with pytest.raises(IntegrityError):
        RefineConfig(margin=0)
    with pytest.raises(IntegrityError):
        RefineConfig(beta1=1.0)
    assert RefineConfig(epochs=10).decay_after_epoch == 8


@pytest.fixture(scope="module")
def five_identity_run():
    scene = generate(SceneSpec(num_identities=5, rng_seed=2))
    tracklets = track(scene.proposals, scene.embeddings, scene.geometry)
    train = sample_triplets(tracklets, scene.proposals, 5000, seed=0)
    held_out = sample_triplets(tracklets, scene.proposals, 2000, seed=99)
    result = refine(scene.embeddings, train, RefineConfig(rng_seed=0))
    return scene, held_out, result


def test_violations_halved_on_held_out(five_identity_run):
    scene, held_out, result = five_identity_run
    before = margin_violations(scene.embeddings, held_out)
    after = margin_violations(result.embeddings, held_out)
    assert before > 0.1
    assert after <= 0.5 * before


def test_loss_curve_non_increasing(five_identity_run):
    curve = five_identity_run[2].loss_curve
    assert len(curve) == 11
    assert all(b <= a + 1e-6 for a, b in zip(curve, curve[1:]))


def test_refine_deterministic():
    emb = small_emb()
    trips = [Triplet("p0", "p1", "p2"), Triplet("p3", "p4", "p5"), Triplet("p6", "p7", "p8")]
    cfg = RefineConfig(learning_rate=1e-2, epochs=4, batch_size=2, rng_seed=5)
    a, b = refine(emb, trips, cfg), refine(emb, trips, cfg)
    assert np.array_equal(a.head, b.head) and a.loss_curve == b.loss_curve
