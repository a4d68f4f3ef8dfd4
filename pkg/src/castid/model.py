"""Domain types for every pipeline stage.

All types are immutable and validate their invariants in ``__post_init__``.
Real-valued scalar fields are canonicalized to 9 significant digits at
construction so that serialization is a lossless bijection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import IntegrityError, MissingEmbeddingError

SIG_DIGITS = 9


def canon(value: float) -> float:
    """Round a real to 9 significant digits (the on-disk precision)."""
    value = float(value)
    if not math.isfinite(value):
        raise IntegrityError(f"non-finite real {value!r}")
    out = float(f"{value:.{SIG_DIGITS}g}")
    return 0.0 if out == 0.0 else out


def canon_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return arr.copy()
    if not np.all(np.isfinite(arr)):
        raise IntegrityError("array contains non-finite components")
    out = np.char.mod(f"%.{SIG_DIGITS}g", arr).astype(np.float64)
    out[out == 0.0] = 0.0
    return out


@dataclass(frozen=True)
class FrameGeometry:
    """Frame extents in pixels plus the keyframe sampling rate."""

    width: float
    height: float
    sample_fps: float

    def __post_init__(self):
        for name in ("width", "height", "sample_fps"):
            v = canon(getattr(self, name))
            if v <= 0:
                raise IntegrityError(f"FrameGeometry.{name} must be > 0, got {v}")
            object.__setattr__(self, name, v)

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, canon(getattr(self, name)))
        if self.w <= 0 or self.h <= 0:
            raise IntegrityError(f"box must have w > 0 and h > 0, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def x1(self) -> float:
        return self.x + self.w

    @property
    def y1(self) -> float:
        return self.y + self.h

    def clamp(self, width: float, height: float) -> "BoundingBox":
        """Clip to ``[0, width] x [0, height]``; raises if nothing is left."""
        x0, y0 = max(self.x, 0.0), max(self.y, 0.0)
        x1, y1 = min(self.x1, width), min(self.y1, height)
        if x1 <= x0 or y1 <= y0:
            raise IntegrityError(f"box {self} lies outside the {width}x{height} frame")
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)

    def iou(self, other: "BoundingBox") -> float:
        ix = min(self.x1, other.x1) - max(self.x, other.x)
        iy = min(self.y1, other.y1) - max(self.y, other.y)
        if ix <= 0 or iy <= 0:
            return 0.0
        inter = ix * iy
        return inter / (self.area + other.area - inter)


@dataclass(frozen=True)
class Proposal:
    proposal_id: str
    video_id: str
    frame_index: int
    shot_id: str
    box: BoundingBox
    confidence: float

    def __post_init__(self):
        if not isinstance(self.frame_index, (int, np.integer)) or isinstance(self.frame_index, bool):
            raise IntegrityError(f"{self.proposal_id}: frame_index must be an integer")
        object.__setattr__(self, "frame_index", int(self.frame_index))
        if self.frame_index < 0:
            raise IntegrityError(f"{self.proposal_id}: frame_index must be >= 0")
        conf = canon(self.confidence)
        if not 0.0 <= conf <= 1.0:
            raise IntegrityError(f"{self.proposal_id}: confidence {conf} outside [0, 1]")
        object.__setattr__(self, "confidence", conf)
        if not self.proposal_id:
            raise IntegrityError("proposal_id must be non-empty")


@dataclass(frozen=True)
class Shot:
    shot_id: str
    start_frame: int
    end_frame: int
    sample_fps: float

    def __post_init__(self):
        if self.end_frame < self.start_frame:
            raise IntegrityError(
                f"shot {self.shot_id}: end_frame {self.end_frame} < start_frame {self.start_frame}"
            )
        if self.start_frame < 0:
            raise IntegrityError(f"shot {self.shot_id}: negative start_frame")
        fps = canon(self.sample_fps)
        if fps <= 0:
            raise IntegrityError(f"shot {self.shot_id}: sample_fps must be > 0")
        object.__setattr__(self, "sample_fps", fps)

    def __contains__(self, frame_index: int) -> bool:
        return self.start_frame <= frame_index <= self.end_frame

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame + 1


class SpaceTag(str, Enum):
    BASE = "base"
    REFINED = "refined"


class EmbeddingSet:
    """Vectors keyed by proposal id, stored as one row-major matrix.

    Row order follows the order the ids were given in; lookups go through
    :meth:`vector` or :meth:`rows`.
    """

    def __init__(self, ids: Sequence[str], matrix, space_tag: SpaceTag | str = SpaceTag.BASE):
        ids = tuple(str(i) for i in ids)
        mat = canon_array(matrix)
        if mat.ndim == 1 and mat.size == 0:
            mat = mat.reshape(0, 0)
        if mat.ndim != 2:
            raise IntegrityError(f"embedding matrix must be 2-D, got shape {mat.shape}")
        if mat.shape[0] != len(ids):
            raise IntegrityError(f"{len(ids)} ids but {mat.shape[0]} vectors")
        if len(ids) and mat.shape[1] <= 0:
            raise IntegrityError("embedding dimension must be > 0")
        if len(set(ids)) != len(ids):
            raise IntegrityError("duplicate proposal_id in embedding set")
        mat.flags.writeable = False
        self._ids = ids
        self._matrix = mat
        self._index = {pid: k for k, pid in enumerate(ids)}
        self._space_tag = SpaceTag(space_tag)

    @classmethod
    def from_mapping(cls, entries: Mapping[str, Sequence[float]], space_tag=SpaceTag.BASE, dimension=None):
        ids = list(entries)
        if not ids:
            return cls((), np.zeros((0, dimension or 1)), space_tag)
        return cls(ids, np.vstack([np.asarray(entries[i], dtype=float) for i in ids]), space_tag)

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def dimension(self) -> int:
        return int(self._matrix.shape[1])

    @property
    def space_tag(self) -> SpaceTag:
        return self._space_tag

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, pid: str) -> bool:
        return pid in self._index

    def vector(self, pid: str) -> np.ndarray:
        try:
            return self._matrix[self._index[pid]]
        except KeyError:
            raise MissingEmbeddingError(f"no embedding for proposal {pid!r}") from None

    def rows(self, pids: Iterable[str]) -> np.ndarray:
        try:
            idx = [self._index[p] for p in pids]
        except KeyError as exc:
            raise MissingEmbeddingError(f"no embedding for proposal {exc.args[0]!r}") from None
        return self._matrix[idx].reshape(len(idx), self.dimension)

    def subset(self, pids: Sequence[str]) -> "EmbeddingSet":
        """The rows of ``pids``, in that order, with the same space tag."""
        return EmbeddingSet(list(pids), self.rows(pids), self._space_tag)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self._ids == other._ids
            and self._space_tag == other._space_tag
            and self._matrix.shape == other._matrix.shape
            and bool(np.array_equal(self._matrix, other._matrix))
        )

    def __repr__(self) -> str:
        return f"EmbeddingSet(n={len(self)}, dimension={self.dimension}, space_tag={self.space_tag.value})"


@dataclass(frozen=True)
class Tracklet:
    """A per-shot proposal chain; ``frame_indices`` mirrors ``proposal_ids``."""

    tracklet_id: str
    shot_id: str
    proposal_ids: tuple[str, ...]
    frame_indices: tuple[int, ...]
    significance: float

    def __post_init__(self):
        object.__setattr__(self, "proposal_ids", tuple(self.proposal_ids))
        object.__setattr__(self, "frame_indices", tuple(int(f) for f in self.frame_indices))
        sig = canon(self.significance)
        object.__setattr__(self, "significance", sig)
        if not self.proposal_ids:
            raise IntegrityError(f"tracklet {self.tracklet_id}: empty")
        if len(self.proposal_ids) != len(self.frame_indices):
            raise IntegrityError(f"tracklet {self.tracklet_id}: ids/frames length mismatch")
        if len(set(self.proposal_ids)) != len(self.proposal_ids):
            raise IntegrityError(f"tracklet {self.tracklet_id}: repeated proposal")
        if any(b <= a for a, b in zip(self.frame_indices, self.frame_indices[1:])):
            raise IntegrityError(
                f"tracklet {self.tracklet_id}: frame_index must be strictly increasing"
            )
        if not 0.0 <= sig <= 1.0:
            raise IntegrityError(f"tracklet {self.tracklet_id}: significance {sig} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.proposal_ids)

    def max_gap(self) -> int:
        return max((b - a for a, b in zip(self.frame_indices, self.frame_indices[1:])), default=0)


@dataclass(frozen=True)
class Triplet:
    anchor: str
    positive: str
    negative: str

    def __post_init__(self):
        if self.anchor == self.positive:
            raise IntegrityError(f"triplet anchor equals positive ({self.anchor})")
        if self.negative in (self.anchor, self.positive):
            raise IntegrityError(f"triplet negative repeats a member ({self.negative})")


def triplet_violations(
    triplet: Triplet, tracklet_of: Mapping[str, str], frame_of: Mapping[str, int]
) -> list[str]:
    """Return the names of the triplet invariants ``triplet`` breaks."""
    bad = []
    if triplet.anchor == triplet.positive:
        bad.append("anchor_equals_positive")
    ta, tp, tn = (tracklet_of.get(p) for p in (triplet.anchor, triplet.positive, triplet.negative))
    if ta is None or ta != tp:
        bad.append("anchor_positive_not_same_tracklet")
    if frame_of.get(triplet.anchor) != frame_of.get(triplet.negative) or tn == ta:
        bad.append("anchor_negative_not_same_frame_other_tracklet")
    return bad


@dataclass(frozen=True)
class Cluster:
    cluster_id: str
    members: tuple[str, ...]
    medoid: str
    scores: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "scores", tuple(canon(s) for s in self.scores))
        if not self.members:
            raise IntegrityError(f"cluster {self.cluster_id}: no members")
        if len(set(self.members)) != len(self.members):
            raise IntegrityError(f"cluster {self.cluster_id}: repeated member")
        if self.medoid not in self.members:
            raise IntegrityError(f"cluster {self.cluster_id}: medoid {self.medoid} is not a member")
        if self.scores and len(self.scores) != len(self.members):
            raise IntegrityError(f"cluster {self.cluster_id}: scores/members length mismatch")
        if any(not 0.0 <= s <= 1.0 for s in self.scores):
            raise IntegrityError(f"cluster {self.cluster_id}: member score outside [0, 1]")

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[Cluster, ...] = ()
    noise: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "noise", tuple(self.noise))
        seen: set[str] = set()
        ids: set[str] = set()
        for c in self.clusters:
            if c.cluster_id in ids:
                raise IntegrityError(f"duplicate cluster_id {c.cluster_id}")
            ids.add(c.cluster_id)
            for m in c.members:
                if m in seen:
                    raise IntegrityError(f"proposal {m} assigned twice")
                seen.add(m)
        for m in self.noise:
            if m in seen:
                raise IntegrityError(f"proposal {m} is both clustered and noise")
            seen.add(m)

    @property
    def proposal_ids(self) -> set[str]:
        out = set(self.noise)
        for c in self.clusters:
            out.update(c.members)
        return out

    def check_partition(self, proposal_ids: Iterable[str]) -> None:
        expected = set(proposal_ids)
        got = self.proposal_ids
        if got != expected:
            raise IntegrityError(
                f"clusters+noise do not partition the input: {len(got - expected)} extra, "
                f"{len(expected - got)} missing"
            )

    def assignment(self) -> dict[str, str]:
        """proposal_id -> cluster_id for clustered (non-noise) proposals."""
        return {m: c.cluster_id for c in self.clusters for m in c.members}

    def by_id(self) -> dict[str, Cluster]:
        return {c.cluster_id: c for c in self.clusters}

    def __len__(self) -> int:
        return len(self.clusters)


@dataclass(frozen=True)
class DictionaryEntry:
    entry_id: str
    cluster_id: str
    representative: str
    name: str | None = None
    discarded: bool = False

    def __post_init__(self):
        if self.name is not None and not str(self.name).strip():
            raise IntegrityError(f"entry {self.entry_id}: blank name")
        if self.discarded and self.name is not None:
            raise IntegrityError(f"entry {self.entry_id}: discarded entries carry no name")


def check_dictionary(entries: Sequence[DictionaryEntry], clusters: ClusterSet) -> None:
    """Every entry's representative must be its cluster's medoid."""
    by_id = clusters.by_id()
    seen = set()
    for e in entries:
        if e.entry_id in seen:
            raise IntegrityError(f"duplicate entry_id {e.entry_id}")
        seen.add(e.entry_id)
        c = by_id.get(e.cluster_id)
        if c is None:
            raise IntegrityError(f"entry {e.entry_id}: unknown cluster {e.cluster_id}")
        if c.medoid != e.representative:
            raise IntegrityError(
                f"entry {e.entry_id}: representative {e.representative} is not the medoid {c.medoid}"
            )


@dataclass(frozen=True)
class IngestConfig:
    min_confidence: float = 0.20
    min_area_fraction: float = 0.025

    def __post_init__(self):
        if not 0.0 <= self.min_confidence <= 1.0:
            raise IntegrityError("min_confidence must lie in [0, 1]")
        if not 0.0 <= self.min_area_fraction <= 1.0:
            raise IntegrityError("min_area_fraction must lie in [0, 1]")


def group_by_shot(proposals: Iterable[Proposal]) -> dict[str, list[Proposal]]:
    """Proposals per shot, each list sorted by (frame_index, proposal_id)."""
    out: dict[str, list[Proposal]] = {}
    for p in proposals:
        out.setdefault(p.shot_id, []).append(p)
    for plist in out.values():
        plist.sort(key=lambda p: (p.frame_index, p.proposal_id))
    return out


def check_proposals_in_shots(proposals: Iterable[Proposal], shots: Sequence[Shot]) -> None:
    by_id = {s.shot_id: s for s in shots}
    for p in proposals:
        s = by_id.get(p.shot_id)
        if s is None:
            raise IntegrityError(f"proposal {p.proposal_id}: unknown shot {p.shot_id}")
        if p.frame_index not in s:
            raise IntegrityError(
                f"proposal {p.proposal_id}: frame {p.frame_index} outside shot "
                f"{s.shot_id} [{s.start_frame}, {s.end_frame}]"
            )
