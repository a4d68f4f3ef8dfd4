"""Background regions that avoid every character box (recursive LER).

The frame is split around the box nearest its center into the four
maximal bands strictly above, below, left and right of that box; each band
recurses with the boxes that reach into it. Results are empty rectangles
meeting a minimum size, not necessarily the largest ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class MinSize:
    min_width: float = 32.0
    min_height: float = 32.0
    min_area: float = 2048.0

    def __post_init__(self):
        if min(self.min_width, self.min_height, self.min_area) <= 0:
            raise ConfigError("MinSize fields must be positive")


@dataclass(frozen=True, order=True)
class Rect:
    """Axis-aligned rectangle by corners, ``x0 < x1`` and ``y0 < y1``."""

    x0: float
    y0: float
    x1: float
    y1: float

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "Rect":
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)

    def is_valid(self, size: MinSize) -> bool:
        return self.width >= size.min_width and self.height >= size.min_height and self.area >= size.min_area

    def overlaps(self, other: "Rect") -> bool:
        """True when the interiors intersect (touching edges do not count)."""
        return self.x0 < other.x1 and other.x0 < self.x1 and self.y0 < other.y1 and other.y0 < self.y1

    def union(self, other: "Rect") -> "Rect":
        return Rect(min(self.x0, other.x0), min(self.y0, other.y0), max(self.x1, other.x1), max(self.y1, other.y1))

    def crop(self, other: "Rect") -> "Rect":
        return Rect(max(self.x0, other.x0), max(self.y0, other.y0), min(self.x1, other.x1), min(self.y1, other.y1))

    def as_xywh(self) -> dict:
        return {"x": self.x0, "y": self.y0, "w": self.width, "h": self.height}


def consolidate(boxes: Iterable[Rect], frame: Rect | None = None) -> list[Rect]:
    """Clip to ``frame`` and merge overlapping boxes into unions until disjoint."""
    work = []
    for b in boxes:
        if frame is not None:
            if not b.overlaps(frame):
                continue
            b = b.crop(frame)
        work.append(b)
    changed = True
    while changed:
        changed = False
        out: list[Rect] = []
        for b in work:
            for k, o in enumerate(out):
                if b.overlaps(o):
                    out[k] = o.union(b)
                    changed = True
                    break
            else:
                out.append(b)
        work = out
    return sorted(work)


def centered_box(frame: Rect, boxes: Sequence[Rect]) -> int:
    """Index of the box whose center is nearest the frame center; ties -> smaller index."""
    cx, cy = frame.center
    d = [(b.center[0] - cx) ** 2 + (b.center[1] - cy) ** 2 for b in boxes]
    return min(range(len(boxes)), key=lambda k: (d[k], k))


def split_by_box(frame: Rect, box: Rect) -> list[Rect]:
    """The four maximal bands of ``frame`` above, below, left and right of ``box``."""
    parts = [
        Rect(frame.x0, frame.y0, frame.x1, box.y0),
        Rect(frame.x0, box.y1, frame.x1, frame.y1),
        Rect(frame.x0, frame.y0, box.x0, frame.y1),
        Rect(box.x1, frame.y0, frame.x1, frame.y1),
    ]
    return [p for p in parts if p.x0 < p.x1 and p.y0 < p.y1]


@dataclass
class WorkCounter:
    """Instrumentation: one call per recursion, linear work = boxes scanned."""

    calls: int = 0
    work: int = 0
    per_call: list[int] = field(default_factory=list)

    def charge(self, n: int) -> None:
        self.calls += 1
        self.work += n + 1
        self.per_call.append(n + 1)


def _ler(frame: Rect, boxes: list[Rect], size: MinSize, counter: WorkCounter | None) -> list[Rect]:
    if counter is not None:
        counter.charge(len(boxes))
    if not frame.is_valid(size):
        return []
    if not boxes:
        return [frame]
    pivot = boxes[centered_box(frame, boxes)]
    out = []
    for sub in split_by_box(frame, pivot):
        inside = [b.crop(sub) for b in boxes if b.overlaps(sub)]
        out.extend(_ler(sub, inside, size, counter))
    return out


def ler(frame: Rect, boxes: Iterable[Rect], size: MinSize = MinSize(), counter: WorkCounter | None = None) -> list[Rect]:
    """Empty rectangles of ``frame`` avoiding every box, each meeting ``size``.

    Boxes are clipped and consolidated first. The result is deduplicated and
    sorted.
    """
    disjoint = consolidate(boxes, frame)
    return sorted(set(_ler(frame, disjoint, size, counter)))


def random_layout(rng: np.random.Generator, n: int, width: float = 1280.0, height: float = 720.0) -> list[Rect]:
    """``n`` random boxes; sides shrink like ``1/sqrt(n)`` so boxes stay mostly disjoint."""
    out = []
    scale = 0.5 / np.sqrt(max(n, 1))
    for _ in range(n):
        w = rng.uniform(0.2, 1.0) * scale * width
        h = rng.uniform(0.2, 1.0) * scale * height
        x = rng.uniform(0, width - w)
        y = rng.uniform(0, height - h)
        out.append(Rect(x, y, x + w, y + h))
    return out


def quadtree_layout(n: int, width: float = 1280.0, height: float = 720.0) -> list[Rect]:
    """Nested layout: one box at the center of the frame, then of each
    quadrant, and so on, breadth first, until ``n`` boxes are placed."""
    out: list[Rect] = []
    queue = [Rect(0.0, 0.0, width, height)]
    while len(out) < n:
        cell = queue.pop(0)
        cx, cy = cell.center
        w, h = cell.width / 8, cell.height / 8
        out.append(Rect(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
        queue.extend([Rect(cell.x0, cell.y0, cx, cy), Rect(cx, cell.y0, cell.x1, cy), Rect(cell.x0, cy, cx, cell.y1), Rect(cx, cy, cell.x1, cell.y1)])
    return out


def staircase_layout(n: int, width: float = 1280.0, height: float = 720.0) -> list[Rect]:
    """Adversarial staircase: small boxes along the frame diagonal. Splits are
    unbalanced here, so work grows faster than quadratic."""
    out = []
    for k in range(n):
        t = (k + 0.5) / n
        w, h = 0.25 * width / n, 0.25 * height / n
        cx, cy = t * width, t * height
        out.append(Rect(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
    return out


LAYOUTS = {
    "random": random_layout,
    "quadtree": lambda rng, n, w, h: quadtree_layout(n, w, h),
    "staircase": lambda rng, n, w, h: staircase_layout(n, w, h),
}


@dataclass(frozen=True)
class ProbeResult:
    sizes: tuple[int, ...]
    mean_work: tuple[float, ...]
    max_work: tuple[int, ...]
    constant: float

    def growth(self) -> list[float]:
        return [b / a for a, b in zip(self.mean_work, self.mean_work[1:])]

    def within_envelope(self, slack: float = 1.0) -> bool:
        return all(w <= slack * self.constant * (n * n + 1) for n, w in zip(self.sizes, self.max_work))


def complexity_probe(
    sizes: Sequence[int] = (4, 8, 16, 32, 64),
    trials: int = 20,
    size: MinSize = MinSize(),
    seed: int = 0,
    layout: str = "random",
    frame: Rect = Rect(0.0, 0.0, 1280.0, 720.0),
) -> ProbeResult:
    """Instrumented LER work on ``layout`` ("random", "quadtree", "staircase") with ``n`` boxes.

    The envelope constant ``C`` is fitted on the two smallest sizes (largest
    ``work / (n^2 + 1)``); ``within_envelope`` then checks
    ``work(n) <= C * (n^2 + 1)`` for every size.
    """
    rng = np.random.default_rng(seed)
    means, maxes = [], []
    for n in sizes:
        works = []
        reps = trials if layout == "random" else 1
        for _ in range(reps):
            boxes = LAYOUTS[layout](rng, n, frame.width, frame.height)
            counter = WorkCounter()
            ler(frame, boxes, size, counter)
            works.append(counter.work)
        means.append(float(np.mean(works)))
        maxes.append(int(max(works)))
    constant = max(w / (n * n + 1) for n, w in zip(sizes[:2], maxes[:2]))
    return ProbeResult(tuple(sizes), tuple(means), tuple(maxes), constant)
