import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from castid.errors import IntegrityError
from castid.shotseg import color_histogram, ingest_shots, naive_segment, save_shots, shots_from_boundaries


def write(path, header, body):
    path.write_text(json.dumps(header) + "\n" + json.dumps(body) + "\n")


def test_boundaries_give_two_shots(tmp_path):
    path = tmp_path / "s.jsonl"
    write(path, {"video_id": "v", "last_frame": 249}, {"boundaries": [0, 100, 250]})
    shots = ingest_shots(path)
    assert len(shots) == 2
    assert [(s.start_frame, s.end_frame) for s in shots] == [(0, 99), (100, 249)]


def test_overlapping_ranges_rejected(tmp_path):
    path = tmp_path / "s.jsonl"
    write(path, {"video_id": "v", "last_frame": 249}, {"ranges": [[0, 120], [100, 249]]})
    with pytest.raises(IntegrityError, match="overlap"):
        ingest_shots(path)


def test_gap_rejected(tmp_path):
    path = tmp_path / "s.jsonl"
    write(path, {"video_id": "v", "last_frame": 249}, {"ranges": [[0, 90], [100, 249]]})
    with pytest.raises(IntegrityError, match="gap"):
        ingest_shots(path)


def test_single_pair_spans_video(tmp_path):
    path = tmp_path / "s.jsonl"
    write(path, {"video_id": "v", "last_frame": 249}, {"boundaries": [0, 250]})
    (shot,) = ingest_shots(path)
    assert (shot.start_frame, shot.end_frame) == (0, 249)


def test_save_ingest_round_trip(tmp_path):
    shots = shots_from_boundaries([0, 5, 9, 30], sample_fps=2.0, video_id="v")
    save_shots(tmp_path / "s.jsonl", shots)
    assert ingest_shots(tmp_path / "s.jsonl") == shots


def test_constant_histograms_one_shot():
    assert len(naive_segment(np.ones((20, 8)))) == 1


def test_alternating_orthogonal_cut_every_step():
    h = np.zeros((10, 2))
    h[::2, 0] = 1
    h[1::2, 1] = 1
    shots = naive_segment(h, threshold=0.5)
    assert len(shots) == 10
    assert shots.boundaries == list(range(11))


def test_three_scenes():
    rng = np.random.default_rng(3)
    means = np.full((3, 15), 2.0)
    for s in range(3):
        means[s, 5 * s : 5 * s + 5] = 200.0
    lengths = [12, 7, 15]
    frames = [rng.poisson(means[s]) + 1 for s, n in enumerate(lengths) for _ in range(n)]
    shots = naive_segment(np.array(frames, dtype=float))
    assert shots.boundaries == [0, 12, 19, 34]


def test_empty_sequence_rejected():
    with pytest.raises(IntegrityError):
        naive_segment(np.zeros((0, 4)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100.0), st.floats(0.05, 0.95))
def test_scale_invariant_partition(seed, scale, threshold):
    h = np.random.default_rng(seed).random((15, 6)) + 0.01
    a = naive_segment(h, threshold)
    b = naive_segment(h * scale, threshold)
    assert a == b
    assert a.boundaries[0] == 0 and a.last_frame == 14


def test_color_histogram_counts_pixels():
    img = np.zeros((4, 5, 3), dtype=np.uint8)
    img[:2] = 255
    hist = color_histogram(img, bins=2)
    assert hist.sum() == 20 and hist[0] == 10 and hist[-1] == 10
