"""Deterministic synthetic benchmark: scenes with known identities.

Every identity owns a few appearance modes. A mode center mixes three
orthonormal directions::

    center(i, m) = a * identity_i + b * shared_m + c * private_im

with ``a^2 + b^2 + c^2 = 1``. Two modes of one identity share only the
identity direction (cosine ``a^2``), while mode ``m`` of two different
identities shares the mode direction (cosine ``b^2``). With the default
weights the base space therefore groups characters by look rather than by
identity, which is the regime the tracklet-driven refinement has to undo.

Each identity sits in its own grid slot and moves linearly during a shot.
Detections switch mode now and then within a track, drop out for short
occlusions and random misses, and false positives scatter background-like
vectors around the frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import BoundingBox, EmbeddingSet, FrameGeometry, IngestConfig, Proposal, SpaceTag
from .shotseg import ShotList, shots_from_boundaries


@dataclass(frozen=True)
class SceneSpec:
    """Synthetic scene parameters.

    Attributes:
        noise_sigma: RMS norm of the Gaussian noise added to each unit-norm
            mode center (per-coordinate deviation ``noise_sigma / sqrt(dim)``).
        identity_weight, shared_weight: squared weights ``a^2`` and ``b^2`` of
            the identity and shared-mode directions; the rest goes to a
            private direction per (identity, mode).
        mode_switch_rate: per-frame probability that a visible identity
            switches to another appearance mode.
        occlusion_rate: per (identity, shot) probability of one mid-track gap
            of 1 or 2 frames.
        detector_miss_rate: per-detection drop probability.
        false_positive_rate: expected false positives per frame.
        negatives_per_shot: background vectors emitted for the negative class.
    """

    num_identities: int = 10
    num_shots: int = 12
    frames_per_shot: int = 10
    dimension: int = 64
    appearance_modes: int = 3
    noise_sigma: float = 0.25
    occlusion_rate: float = 0.1
    detector_miss_rate: float = 0.03
    false_positive_rate: float = 0.1
    rng_seed: int = 0
    identity_weight: float = 0.25
    shared_weight: float = 0.45
    mode_switch_rate: float = 0.25
    negatives_per_shot: int = 4
    frame_width: float = 1280.0
    frame_height: float = 720.0
    sample_fps: float = 4.0
    video_id: str = "synth"

    def __post_init__(self):
        counts = ("num_identities", "num_shots", "frames_per_shot", "dimension", "appearance_modes")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"SceneSpec.{name} must be positive")
        for name in ("occlusion_rate", "detector_miss_rate", "false_positive_rate", "mode_switch_rate"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"SceneSpec.{name} must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ConfigError("SceneSpec.noise_sigma must be >= 0")
        a2, b2 = self.identity_weight, self.shared_weight
        if a2 < 0 or b2 < 0 or a2 + b2 > 1:
            raise ConfigError("identity_weight and shared_weight must be >= 0 with sum <= 1")
        if self.negatives_per_shot < 0:
            raise ConfigError("negatives_per_shot must be >= 0")

    @property
    def directions_needed(self) -> int:
        # identities + shared modes + private per (identity, mode) + background
        return self.num_identities + self.appearance_modes + self.num_identities * self.appearance_modes + 1


@dataclass
class SyntheticScene:
    spec: SceneSpec
    geometry: FrameGeometry
    shots: ShotList
    proposals: list[Proposal]
    embeddings: EmbeddingSet
    labels: dict
    negatives: EmbeddingSet
    mode_centers: np.ndarray
    modes: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return identity_names(self.spec.num_identities)


def identity_names(n: int) -> list[str]:
    return [f"char{k:02d}" for k in range(n)]


def _directions(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """``count`` orthonormal rows when ``count <= dim``; random unit rows otherwise."""
    G = rng.standard_normal((dim, count))
    if count <= dim:
        Q, R = np.linalg.qr(G)
        return (Q * np.sign(np.diag(R))).T
    return (G / np.linalg.norm(G, axis=0)).T


def mode_centers(spec: SceneSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Unit mode centers, shape ``(identities, modes, dim)``, and the background direction."""
    n, m = spec.num_identities, spec.appearance_modes
    D = _directions(rng, spec.directions_needed, spec.dimension)
    ident, shared = D[:n], D[n : n + m]
    private = D[n + m : n + m + n * m].reshape(n, m, -1)
    background = D[-1]
    a, b = math.sqrt(spec.identity_weight), math.sqrt(spec.shared_weight)
    c = math.sqrt(max(0.0, 1.0 - spec.identity_weight - spec.shared_weight))
    centers = a * ident[:, None, :] + b * shared[None, :, :] + c * private
    centers /= np.linalg.norm(centers, axis=2, keepdims=True)
    return centers, background


def _slots(spec: SceneSpec) -> tuple[int, int, float, float]:
    W, H, n = spec.frame_width, spec.frame_height, spec.num_identities
    cols = max(1, math.ceil(math.sqrt(n * W / H)))
    rows = math.ceil(n / cols)
    return cols, rows, W / cols, H / rows


def check_geometry(spec: SceneSpec, ingest: IngestConfig = IngestConfig()) -> None:
    """Raise :class:`ConfigError` when identity boxes would be too small to survive ingestion."""
    _, _, sw, sh = _slots(spec)
    frac = (0.5 * sw) * (0.6 * sh) / (spec.frame_width * spec.frame_height)
    if frac < ingest.min_area_fraction:
        raise ConfigError(
            f"{spec.num_identities} identities do not fit a {spec.frame_width:g}x{spec.frame_height:g} frame: "
            f"boxes would cover {frac:.4f} of the frame, below {ingest.min_area_fraction}"
        )


def _noise(rng: np.random.Generator, spec: SceneSpec, k: int = 1) -> np.ndarray:
    return rng.standard_normal((k, spec.dimension)) * (spec.noise_sigma / math.sqrt(spec.dimension))


def generate(spec: SceneSpec = SceneSpec()) -> SyntheticScene:
    """Build a scene; the same spec always yields bit-identical output."""
    check_geometry(spec)
    rng = np.random.default_rng(spec.rng_seed)
    centers, background = mode_centers(spec, rng)
    names = identity_names(spec.num_identities)
    cols, _, sw, sh = _slots(spec)
    bw, bh = 0.5 * sw, 0.6 * sh
    F = spec.frames_per_shot
    shots = shots_from_boundaries([s * F for s in range(spec.num_shots + 1)], spec.sample_fps, spec.video_id)
    geometry = FrameGeometry(spec.frame_width, spec.frame_height, spec.sample_fps)

    proposals: list[Proposal] = []
    vectors: list[np.ndarray] = []
    labels: dict = {}
    modes: dict = {}
    negatives: list[np.ndarray] = []

    def emit(frame, shot_id, box, conf, vec, label, mode):
        pid = f"p{len(proposals):06d}"
        proposals.append(Proposal(pid, spec.video_id, frame, shot_id, box, conf))
        vectors.append(vec)
        labels[pid] = label
        if mode is not None:
            modes[pid] = mode

    for shot in shots:
        slot_of = rng.permutation(spec.num_identities)
        tracks = []
        for i in range(spec.num_identities):
            col, row = divmod(int(slot_of[i]), cols)[::-1]
            x0, y0 = col * sw, row * sh
            start = np.array([x0 + rng.uniform(0, sw - bw), y0 + rng.uniform(0, sh - bh)])
            end = np.array([x0 + rng.uniform(0, sw - bw), y0 + rng.uniform(0, sh - bh)])
            hidden = set()
            if F >= 4 and rng.random() < spec.occlusion_rate:
                length = int(rng.integers(1, 3))
                first = int(rng.integers(1, F - length))
                hidden = set(range(first, first + length))
            mode = int(rng.integers(spec.appearance_modes))
            tracks.append((start, end, hidden, mode, float(rng.uniform(0.75, 0.95))))
        for t in range(F):
            frame = shot.start_frame + t
            for i, (start, end, hidden, mode, base_conf) in enumerate(tracks):
                if t > 0 and spec.appearance_modes > 1 and rng.random() < spec.mode_switch_rate:
                    mode = int((mode + rng.integers(1, spec.appearance_modes)) % spec.appearance_modes)
                    tracks[i] = (start, end, hidden, mode, base_conf)
                if t in hidden or rng.random() < spec.detector_miss_rate:
                    continue
                pos = start + (end - start) * (t / max(1, F - 1))
                box = BoundingBox(pos[0], pos[1], bw, bh)
                conf = float(np.clip(base_conf + rng.normal(0, 0.02), 0.5, 0.99))
                vec = centers[i, mode] + _noise(rng, spec)[0]
                emit(frame, shot.shot_id, box, conf, vec, names[i], mode)
            n_fp = int(rng.poisson(spec.false_positive_rate))
            for _ in range(n_fp):
                w = rng.uniform(0.5, 1.0) * bw
                h = rng.uniform(0.5, 1.0) * bh
                box = BoundingBox(rng.uniform(0, spec.frame_width - w), rng.uniform(0, spec.frame_height - h), w, h)
                vec = background + _noise(rng, spec)[0] * 2.0
                emit(frame, shot.shot_id, box, float(rng.uniform(0.2, 0.5)), vec, None, None)
        if spec.negatives_per_shot:
            negatives.extend(background + _noise(rng, spec, spec.negatives_per_shot) * 2.0)

    ids = [p.proposal_id for p in proposals]
    matrix = np.vstack(vectors) if vectors else np.zeros((0, spec.dimension))
    neg = np.vstack(negatives) if negatives else np.zeros((0, spec.dimension))
    return SyntheticScene(
        spec=spec,
        geometry=geometry,
        shots=shots,
        proposals=proposals,
        embeddings=EmbeddingSet(ids, matrix, SpaceTag.BASE),
        labels=labels,
        negatives=EmbeddingSet([f"bg{k:05d}" for k in range(len(neg))], neg, SpaceTag.BASE),
        mode_centers=centers,
        modes=modes,
    )
