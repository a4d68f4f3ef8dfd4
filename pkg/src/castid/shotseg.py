"""Shot boundaries: ingest an external segmentation, or cut on histogram jumps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import IntegrityError, ParseError
from .io import _field, _read_header, write_records
from .model import Shot

DEFAULT_THRESHOLD = 0.35


@dataclass(frozen=True)
class ShotList:
    """Ordered, contiguous shots covering ``[0, last_frame]``."""

    shots: tuple[Shot, ...]
    video_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "shots", tuple(self.shots))
        if not self.shots:
            raise IntegrityError("a shot list needs at least one shot")
        if self.shots[0].start_frame != 0:
            raise IntegrityError(f"first shot starts at {self.shots[0].start_frame}, expected 0")
        ids = set()
        for prev, nxt in zip(self.shots, self.shots[1:]):
            if nxt.start_frame <= prev.end_frame:
                raise IntegrityError(f"shots {prev.shot_id} and {nxt.shot_id} overlap")
            if nxt.start_frame > prev.end_frame + 1:
                raise IntegrityError(f"gap between shots {prev.shot_id} and {nxt.shot_id}")
        for s in self.shots:
            if s.shot_id in ids:
                raise IntegrityError(f"duplicate shot_id {s.shot_id}")
            ids.add(s.shot_id)

    @property
    def last_frame(self) -> int:
        return self.shots[-1].end_frame

    @property
    def boundaries(self) -> list[int]:
        return [s.start_frame for s in self.shots] + [self.last_frame + 1]

    def __len__(self) -> int:
        return len(self.shots)

    def __iter__(self):
        return iter(self.shots)

    def shot_of(self, frame_index: int) -> Shot:
        starts = [s.start_frame for s in self.shots]
        k = int(np.searchsorted(starts, frame_index, side="right")) - 1
        if k < 0 or frame_index > self.last_frame:
            raise IntegrityError(f"frame {frame_index} outside the shot list")
        return self.shots[k]


def shots_from_boundaries(boundaries: Sequence[int], sample_fps: float = 1.0, video_id: str = "") -> ShotList:
    """Build shots from ascending cut positions ``[b0=0, b1, ..., bn=last_frame+1]``."""
    b = [int(x) for x in boundaries]
    if len(b) < 2:
        raise IntegrityError("need at least one boundary pair")
    if any(y <= x for x, y in zip(b, b[1:])):
        raise IntegrityError(f"boundaries must be strictly ascending: {b}")
    shots = [Shot(f"s{k}", lo, hi - 1, sample_fps) for k, (lo, hi) in enumerate(zip(b, b[1:]))]
    return ShotList(tuple(shots), video_id)


def save_shots(path, shots: ShotList) -> None:
    header = {
        "video_id": shots.video_id,
        "last_frame": shots.last_frame,
        "sample_fps": shots.shots[0].sample_fps,
    }
    write_records(path, header, [{"boundaries": shots.boundaries}])


def ingest_shots(path, sample_fps: float | None = None) -> ShotList:
    """Read a shots file: header ``{video_id, last_frame}`` then a boundary list.

    The body is either ``{"boundaries": [...]}`` or ``{"ranges": [[start, end], ...]}``
    (inclusive ranges). Gaps, overlaps and incomplete coverage raise
    :class:`IntegrityError`.
    """
    header, records = _read_header(path, None)
    if header is None:
        raise ParseError("shots file is empty", line=1)
    video_id = str(header.get("video_id", ""))
    last = _field(header, "last_frame", 1, int)
    fps = sample_fps if sample_fps is not None else header.get("sample_fps", 1.0)
    body = list(records)
    if len(body) != 1:
        raise ParseError("shots file must hold exactly one boundary record after the header")
    lineno, rec = body[0]
    if "boundaries" in rec:
        b = _field(rec, "boundaries", lineno, list)
        if not b or b[0] != 0:
            raise IntegrityError(f"line {lineno}: boundaries must start at frame 0")
        if b[-1] != last + 1:
            raise IntegrityError(
                f"line {lineno}: boundaries end at {b[-1]} but last_frame is {last} (expected {last + 1})"
            )
        return shots_from_boundaries(b, fps, video_id)
    ranges = _field(rec, "ranges", lineno, list)
    shots = []
    for k, r in enumerate(ranges):
        if not isinstance(r, list) or len(r) != 2:
            raise ParseError("each range must be [start, end]", line=lineno)
        shots.append(Shot(f"s{k}", int(r[0]), int(r[1]), fps))
    sl = ShotList(tuple(shots), video_id)
    if sl.last_frame != last:
        raise IntegrityError(f"line {lineno}: ranges end at {sl.last_frame}, last_frame is {last}")
    return sl


def histogram_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Half the L1 distance between two sum-normalized histograms, in [0, 1]."""
    return 0.5 * float(np.abs(a - b).sum())


def naive_segment(
    histograms, threshold: float = DEFAULT_THRESHOLD, sample_fps: float = 1.0, video_id: str = ""
) -> ShotList:
    """Cut wherever consecutive normalized histograms differ by more than ``threshold``."""
    h = np.asarray(histograms, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise IntegrityError("naive_segment needs a non-empty (frames x bins) histogram sequence")
    if np.any(h < 0):
        raise IntegrityError("histograms must be non-negative")
    sums = h.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise IntegrityError("every histogram needs positive mass")
    h = h / sums
    cuts = [0]
    for k in range(1, h.shape[0]):
        if histogram_distance(h[k - 1], h[k]) > threshold:
            cuts.append(k)
    cuts.append(h.shape[0])
    return shots_from_boundaries(cuts, sample_fps, video_id)


def color_histogram(image: np.ndarray, bins: int = 8) -> np.ndarray:
    """Joint RGB histogram (``bins`` per channel) of an ``H x W x 3`` uint8 frame."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an H x W x 3 image")
    q = (img.astype(np.int64) * bins) // 256
    flat = (q[..., 0] * bins + q[..., 1]) * bins + q[..., 2]
    return np.bincount(flat.ravel(), minlength=bins**3).astype(np.float64)
