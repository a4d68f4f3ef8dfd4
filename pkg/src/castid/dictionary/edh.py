"""Edge directional histogram (EDH) features for near-duplicate screening.

116 values: a 4x4x4 joint HSV histogram (64 bins) followed by, for each
quadrant of the crop (top-left, top-right, bottom-left, bottom-right),
12 edge-orientation bins and one no-edge bin. The vector is L2-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from ..errors import IntegrityError

COLOR_BINS = 4
ORIENTATION_BINS = 12
QUADRANTS = 4
EDH_LENGTH = COLOR_BINS**3 + QUADRANTS * (ORIENTATION_BINS + 1)
MIN_CROP = 8


@dataclass(frozen=True)
class DedupConfig:
    similarity_prune: float = 0.995
    blur_kernel: int = 7
    blur_sigma: float = 1.5
    canny_low: float = 50.0
    canny_high: float = 150.0

    def __post_init__(self):
        if not 0.0 < self.similarity_prune < 1.0:
            raise IntegrityError("similarity_prune must lie in (0, 1)")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise IntegrityError("blur_kernel must be a positive odd size")
        if not 0 <= self.canny_low <= self.canny_high:
            raise IntegrityError("need 0 <= canny_low <= canny_high")


def _as_rgb(crop) -> np.ndarray:
    img = np.asarray(crop)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise IntegrityError(f"crop must be H x W or H x W x 3, got shape {img.shape}")
    if img.shape[0] < MIN_CROP or img.shape[1] < MIN_CROP:
        raise IntegrityError(f"crop {img.shape[1]}x{img.shape[0]} is smaller than {MIN_CROP}x{MIN_CROP}")
    if img.dtype != np.uint8:
        img = np.clip(img, 0, 255).astype(np.uint8)
    return np.ascontiguousarray(img)


def color_histogram(rgb: np.ndarray) -> np.ndarray:
    hsv = cv2.cvtColor(rgb, cv2.COLOR_RGB2HSV).astype(np.int64)
    h = np.minimum(hsv[..., 0] * COLOR_BINS // 180, COLOR_BINS - 1)
    s = hsv[..., 1] * COLOR_BINS // 256
    v = hsv[..., 2] * COLOR_BINS // 256
    flat = (h * COLOR_BINS + s) * COLOR_BINS + v
    hist = np.bincount(flat.ravel(), minlength=COLOR_BINS**3).astype(np.float64)
    return hist / hist.sum()


def edge_field(rgb: np.ndarray, config: DedupConfig = DedupConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Canny edge mask and per-pixel gradient orientation bin (0..11)."""
    gray = cv2.cvtColor(rgb, cv2.COLOR_RGB2GRAY)
    k = config.blur_kernel
    blurred = cv2.GaussianBlur(gray, (k, k), config.blur_sigma)
    edges = cv2.Canny(blurred, config.canny_low, config.canny_high) > 0
    f = blurred.astype(np.float64)
    gx = cv2.Sobel(f, cv2.CV_64F, 1, 0, ksize=3)
    gy = cv2.Sobel(f, cv2.CV_64F, 0, 1, ksize=3)
    angle = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    bins = np.floor(angle / (2 * np.pi / ORIENTATION_BINS)).astype(np.int64) % ORIENTATION_BINS
    return edges, bins


def quadrant_histograms(edges: np.ndarray, bins: np.ndarray) -> np.ndarray:
    """``4 x 13`` array: per quadrant, orientation counts of edge pixels then non-edge count, as fractions."""
    h, w = edges.shape
    r, c = h // 2, w // 2
    out = np.zeros((QUADRANTS, ORIENTATION_BINS + 1))
    blocks = [(slice(0, r), slice(0, c)), (slice(0, r), slice(c, w)), (slice(r, h), slice(0, c)), (slice(r, h), slice(c, w))]
    for q, (rs, cs) in enumerate(blocks):
        e, b = edges[rs, cs], bins[rs, cs]
        out[q, :ORIENTATION_BINS] = np.bincount(b[e], minlength=ORIENTATION_BINS)
        out[q, ORIENTATION_BINS] = e.size - e.sum()
        out[q] /= e.size
    return out


def edh_features(crop, config: DedupConfig = DedupConfig()) -> np.ndarray:
    """The 116-value EDH vector of an RGB (or gray) crop."""
    rgb = _as_rgb(crop)
    edges, bins = edge_field(rgb, config)
    vec = np.concatenate([color_histogram(rgb), quadrant_histograms(edges, bins).ravel()])
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise IntegrityError("degenerate crop: empty feature vector")
    return vec / norm
