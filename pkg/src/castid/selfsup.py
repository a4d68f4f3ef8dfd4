"""Tracklet-driven triplet sampling and triplet-margin refinement.

The refinement trains a linear projection head on top of the base
embeddings with decoupled weight decay Adam (AdamW). Anchors and positives
come from one tracklet; negatives share the anchor's frame but not its
tracklet.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import IntegrityError
from .model import EmbeddingSet, Proposal, SpaceTag, Tracklet, Triplet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefineConfig:
    num_triplets: int = 10_000
    epochs: int = 10
    batch_size: int = 20
    learning_rate: float = 2e-5
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay_gamma: float = 0.1
    margin: float = 1.0
    output_dimension: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise IntegrityError("margin must be > 0")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise IntegrityError("learning_rate and weight_decay must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise IntegrityError("beta1 and beta2 must lie in [0, 1)")
        if self.lr_decay_gamma <= 0:
            raise IntegrityError("lr_decay_gamma must be > 0")
        if self.epochs < 0 or self.batch_size < 1 or self.num_triplets < 0:
            raise IntegrityError("epochs >= 0, batch_size >= 1 and num_triplets >= 0 required")
        if self.output_dimension is not None and self.output_dimension < 1:
            raise IntegrityError("output_dimension must be >= 1")

    @property
    def decay_after_epoch(self) -> int:
        return math.ceil(0.8 * self.epochs)


# -- triplet sampling --------------------------------------------------------


@dataclass(frozen=True)
class _Frame:
    members: tuple[tuple[str, int], ...]  # (proposal_id, tracklet index), sorted by id
    anchors: tuple[tuple[str, int], ...]  # members whose tracklet has >= 2 proposals


def _eligible_shots(tracklets: Sequence[Tracklet], frame_of: Mapping[str, int]) -> list[list[_Frame]]:
    by_shot: dict[str, list[int]] = {}
    for k, t in enumerate(tracklets):
        by_shot.setdefault(t.shot_id, []).append(k)
    shots = []
    for shot_id in sorted(by_shot):
        idx = by_shot[shot_id]
        if len(idx) < 2:
            continue
        frames: dict[int, list[tuple[str, int]]] = {}
        for k in idx:
            for pid in tracklets[k].proposal_ids:
                frames.setdefault(frame_of[pid], []).append((pid, k))
        eligible = []
        for f in sorted(frames):
            members = tuple(sorted(frames[f]))
            if len({k for _, k in members}) < 2:
                continue
            anchors = tuple(m for m in members if len(tracklets[m[1]]) >= 2)
            if anchors:
                eligible.append(_Frame(members, anchors))
        if eligible:
            shots.append(eligible)
    return shots


def sample_triplets(
    tracklets: Sequence[Tracklet],
    proposals: Sequence[Proposal] | Mapping[str, int],
    n: int,
    seed: int = 0,
) -> list[Triplet]:
    """Draw ``n`` triplets with replacement.

    Each draw picks a shot uniformly among shots with at least two tracklets
    and an eligible frame, then a frame uniformly among that shot's eligible
    frames (two or more tracklets present, one of them long enough to supply
    a positive), then the anchor and a negative from distinct tracklets on
    that frame, then the positive uniformly from the rest of the anchor's
    tracklet. Returns ``[]`` when nothing is eligible.
    """
    if n < 0:
        raise IntegrityError("n must be >= 0")
    if isinstance(proposals, Mapping):
        frame_of = dict(proposals)
    else:
        frame_of = {p.proposal_id: p.frame_index for p in proposals}
    shots = _eligible_shots(tracklets, frame_of)
    if not shots or n == 0:
        return []
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        frames = shots[rng.integers(len(shots))]
        frame = frames[rng.integers(len(frames))]
        anchor, tk = frame.anchors[rng.integers(len(frame.anchors))]
        others = [m for m in frame.members if m[1] != tk]
        negative = others[rng.integers(len(others))][0]
        pool = [p for p in tracklets[tk].proposal_ids if p != anchor]
        positive = pool[rng.integers(len(pool))]
        out.append(Triplet(anchor, positive, negative))
    return out


# -- loss and gradient -------------------------------------------------------


def triplet_loss(a, p, n, margin: float = 1.0) -> float:
    """``max(0, |a - p|^2 - |a - n|^2 + margin)``."""
    a, p, n = (np.asarray(v, dtype=np.float64) for v in (a, p, n))
    if not (a.shape == p.shape == n.shape):
        raise IntegrityError(f"dimension mismatch: {a.shape}, {p.shape}, {n.shape}")
    return max(0.0, float(((a - p) ** 2).sum() - ((a - n) ** 2).sum() + margin))


def head_losses(W: np.ndarray, A: np.ndarray, P: np.ndarray, N: np.ndarray, margin: float) -> np.ndarray:
    """Per-triplet loss after projecting rows of A, P, N through ``W``."""
    wu = (A - P) @ W.T
    wv = (A - N) @ W.T
    return np.maximum(0.0, (wu**2).sum(1) - (wv**2).sum(1) + margin)


def head_loss_and_grad(
    W: np.ndarray, A: np.ndarray, P: np.ndarray, N: np.ndarray, margin: float
) -> tuple[float, np.ndarray]:
    """Mean triplet loss over the rows and its gradient w.r.t. ``W``.

    For an active triplet with ``u = a - p`` and ``v = a - n`` the gradient is
    ``2 (W u u^T - W v v^T)``; inactive triplets contribute zero.
    """
    U, V = A - P, A - N
    WU, WV = U @ W.T, V @ W.T
    losses = (WU**2).sum(1) - (WV**2).sum(1) + margin
    active = losses > 0
    b = len(A)
    grad = (2.0 / b) * (WU[active].T @ U[active] - WV[active].T @ V[active])
    return float(np.maximum(losses, 0.0).sum() / b), grad


# -- refinement --------------------------------------------------------------


def initial_head(input_dimension: int, output_dimension: int | None = None) -> np.ndarray:
    """Identity, truncated or zero-padded when the output size differs."""
    out = output_dimension or input_dimension
    return np.eye(out, input_dimension)


@dataclass
class RefineResult:
    embeddings: EmbeddingSet
    head: np.ndarray
    loss_curve: list[float] = field(default_factory=list)
    """Mean loss over the full triplet set: index 0 before training, then after each epoch."""

    def loss_table(self) -> str:
        lines = ["epoch\tmean_loss"]
        lines += [f"{k}\t{v:.9g}" for k, v in enumerate(self.loss_curve)]
        return "\n".join(lines) + "\n"


def project(emb: EmbeddingSet, head: np.ndarray) -> EmbeddingSet:
    return EmbeddingSet(emb.ids, emb.matrix @ head.T, SpaceTag.REFINED)


def refine(emb: EmbeddingSet, triplets: Sequence[Triplet], config: RefineConfig = RefineConfig()) -> RefineResult:
    """Train the projection head on ``triplets`` and project every embedding."""
    W = initial_head(emb.dimension, config.output_dimension)
    if not triplets:
        return RefineResult(project(emb, W), W, [])
    A = emb.rows(t.anchor for t in triplets)
    P = emb.rows(t.positive for t in triplets)
    N = emb.rows(t.negative for t in triplets)

    rng = np.random.default_rng(config.rng_seed)
    m = np.zeros_like(W)
    v = np.zeros_like(W)
    b1, b2 = config.beta1, config.beta2
    lr = config.learning_rate
    step = 0
    curve = [float(head_losses(W, A, P, N, config.margin).mean())]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(triplets))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            _, g = head_loss_and_grad(W, A[idx], P[idx], N[idx], config.margin)
            step += 1
            W = W * (1.0 - lr * config.weight_decay)
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**step)
            v_hat = v / (1.0 - b2**step)
            W = W - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        curve.append(float(head_losses(W, A, P, N, config.margin).mean()))
        if curve[-1] > curve[-2] + 1e-6:
            logger.warning("epoch %d: mean triplet loss rose from %.6g to %.6g", epoch, curve[-2], curve[-1])
        if epoch == config.decay_after_epoch:
            lr *= config.lr_decay_gamma
    return RefineResult(project(emb, W), W, curve)


def margin_violations(emb: EmbeddingSet, triplets: Sequence[Triplet], margin: float = 1.0) -> float:
    """Fraction of triplets with positive loss in the given space."""
    if not triplets:
        return 0.0
    A = emb.rows(t.anchor for t in triplets)
    P = emb.rows(t.positive for t in triplets)
    N = emb.rows(t.negative for t in triplets)
    return float((head_losses(np.eye(emb.dimension), A, P, N, margin) > 0).mean())
