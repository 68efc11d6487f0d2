"""Shared value types and geometry primitives.

Everything here is an immutable value; the operations are pure functions,
so instances can be shared freely between concurrent workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InvalidBoxError(ValueError):
    """Bounding box with non-positive width or height."""


class InvalidRoiError(ValueError):
    """ROI polygon that is degenerate, self-intersecting or malformed."""


@dataclass(frozen=True)
class Point:
    x: float
    y: float


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner plus width/height, in pixels.

    Coordinates are continuous (detections carry sub-pixel positions);
    width and height must be strictly positive.
    """

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise InvalidBoxError(f"box must have positive size, got w={self.w} h={self.h}")
        # normalize to float so equal boxes serialize identically
        # regardless of how the caller spelled the numbers
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h


@dataclass(frozen=True, eq=False)
class Frame:
    """One grayscale video frame: 8-bit luminance plane plus frame number."""

    index: int
    pixels: np.ndarray  # (height, width) uint8, row-major

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"frame index must be non-negative, got {self.index}")
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.ndim != 2 or p.dtype != np.uint8:
            raise ValueError("frame pixels must be a 2-D uint8 array")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("frame must have positive dimensions")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)


def _on_segment(p: Point, a: Point, b: Point) -> bool:
    if _cross(a, b, p) != 0.0:
        return False
    return min(a.x, b.x) <= p.x <= max(a.x, b.x) and min(a.y, b.y) <= p.y <= max(a.y, b.y)


def _segments_properly_intersect(a: Point, b: Point, c: Point, d: Point) -> bool:
    d1 = _cross(c, d, a)
    d2 = _cross(c, d, b)
    d3 = _cross(a, b, c)
    d4 = _cross(a, b, d)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    # collinear / touching cases
    for p, s0, s1 in ((a, c, d), (b, c, d), (c, a, b), (d, a, b)):
        if _on_segment(p, s0, s1) and p not in (s0, s1):
            return True
    return False


@dataclass(frozen=True)
class Roi:
    """No-parking zone: a simple polygon with at least three vertices.

    The polygon closes implicitly from the last vertex back to the first.
    Construction rejects degenerate (zero-area) and self-intersecting
    vertex lists.
    """

    vertices: tuple[Point, ...]

    def __post_init__(self) -> None:
        verts = tuple(self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise InvalidRoiError(f"ROI needs at least 3 vertices, got {len(verts)}")
        n = len(verts)
        for i in range(n):
            if verts[i] == verts[(i + 1) % n]:
                raise InvalidRoiError(f"ROI has repeated consecutive vertex at index {i}")
        area2 = 0.0
        for i in range(n):
            a, b = verts[i], verts[(i + 1) % n]
            area2 += a.x * b.y - b.x * a.y
        if area2 == 0.0:
            raise InvalidRoiError("ROI polygon has zero area")
        for i in range(n):
            for j in range(i + 1, n):
                # adjacent edges share an endpoint; skip them
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                if _segments_properly_intersect(verts[i], verts[(i + 1) % n], verts[j], verts[(j + 1) % n]):
                    raise InvalidRoiError(f"ROI polygon self-intersects (edges {i} and {j})")


def bbox_iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes, using real-valued areas.

    Symmetric; 1.0 iff the boxes are identical, 0.0 iff they do not overlap.
    """
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    # areas from the same rounded edges as the intersection, so that
    # identical boxes cancel to exactly 1.0 in float arithmetic
    area_a = (a.x2 - a.x) * (a.y2 - a.y)
    area_b = (b.x2 - b.x) * (b.y2 - b.y)
    union = area_a + area_b - inter
    return inter / union


def bbox_center(b: BBox) -> Point:
    return Point(b.x + b.w / 2, b.y + b.h / 2)


def roi_contains(roi: Roi, p: Point) -> bool:
    """Even-odd (ray casting) point-in-polygon test; boundary counts as inside."""
    verts = roi.vertices
    n = len(verts)
    for i in range(n):
        if _on_segment(p, verts[i], verts[(i + 1) % n]):
            return True
    inside = False
    j = n - 1
    for i in range(n):
        vi, vj = verts[i], verts[j]
        if (vi.y > p.y) != (vj.y > p.y):
            x_at = (vj.x - vi.x) * (p.y - vi.y) / (vj.y - vi.y) + vi.x
            if p.x < x_at:
                inside = not inside
        j = i
    return inside


def parse_roi(text: str) -> Roi:
    """Parse the ROI file format: one "x y" vertex per line, '#' comments."""
    verts: list[Point] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidRoiError(f"line {lineno}: expected 'x y', got {raw!r}")
        try:
            x, y = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise InvalidRoiError(f"line {lineno}: non-numeric coordinate in {raw!r}") from exc
        if not (math.isfinite(x) and math.isfinite(y)):
            raise InvalidRoiError(f"line {lineno}: non-finite coordinate in {raw!r}")
        verts.append(Point(x, y))
    return Roi(tuple(verts))


def load_roi(path) -> Roi:
    with open(path, "r", encoding="ascii") as fh:
        return parse_roi(fh.read())


def format_roi(roi: Roi) -> str:
    return "".join(f"{v.x!r} {v.y!r}\n" for v in roi.vertices)
