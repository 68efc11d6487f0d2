"""Zero-mean normalized cross-correlation template matching.

A template is cut from a reference frame, centred and scaled once at
construction.  Scoring a candidate window is then a single dot product
against the window's centred pixels divided by the window norm, which
keeps scores in [-1, 1]: 1 for a perfect match, -1 for a perfect
inversion, 0 for no linear relationship.

``match_template`` scans a search window with integral images so the
per-position normalization is O(1), then rescores the winning position
directly so the reported score is bit-identical to ``ncc_score`` at
that position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BBox, Frame, Point


class ZeroVarianceError(ValueError):
    """Template patch has no variance, so correlation is undefined."""


class OutOfBoundsError(ValueError):
    """Requested patch or window does not fit inside the frame."""


class EmptySearchError(ValueError):
    """Search window is smaller than the template."""


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True, eq=False)
class Template:
    """Centred, unit-normalized image patch.

    ``unit`` is (pixels - mean) / norm, precomputed so that scoring a
    window reduces to one dot product.
    """

    pixels: np.ndarray
    mean: float
    norm: float
    unit: np.ndarray = field(repr=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def make_template(frame: Frame, box: BBox) -> Template:
    """Cut ``box`` out of ``frame`` and normalize it.

    Fractional box coordinates are rounded half up to pixel indices.
    Raises OutOfBoundsError when the rounded patch leaves the frame and
    ZeroVarianceError for a constant patch.
    """
    x = _round_half_up(box.x)
    y = _round_half_up(box.y)
    w = _round_half_up(box.w)
    h = _round_half_up(box.h)
    if w <= 0 or h <= 0:
        raise OutOfBoundsError(f"degenerate template size {w}x{h}")
    if x < 0 or y < 0 or x + w > frame.width or y + h > frame.height:
        raise OutOfBoundsError(
            f"template {w}x{h} at ({x}, {y}) leaves {frame.width}x{frame.height} frame"
        )
    pixels = frame.pixels[y : y + h, x : x + w].astype(np.float64)
    mean = float(pixels.mean())
    centered = pixels - mean
    norm = float(np.sqrt(np.sum(centered * centered)))
    if norm == 0.0:
        raise ZeroVarianceError("template patch is constant")
    return Template(pixels=pixels, mean=mean, norm=norm, unit=centered / norm)


def ncc_score(template: Template, frame: Frame, position: Point) -> float:
    """Correlation between the template and the window at ``position``.

    ``position`` is the window's integer top-left corner.  A window with
    zero variance scores 0.0 by convention.
    """
    x, y = int(position.x), int(position.y)
    h, w = template.height, template.width
    if x < 0 or y < 0 or x + w > frame.width or y + h > frame.height:
        raise OutOfBoundsError(
            f"window {w}x{h} at ({x}, {y}) leaves {frame.width}x{frame.height} frame"
        )
    window = frame.pixels[y : y + h, x : x + w].astype(np.float64)
    centered = window - window.mean()
    wnorm = np.sqrt(np.sum(centered * centered))
    if wnorm == 0.0:
        return 0.0
    return float(np.dot(template.unit.ravel(), centered.ravel()) / wnorm)


@dataclass(frozen=True)
class MatchResult:
    """Best placement found by an exhaustive window scan."""

    position: Point
    score: float


@dataclass(frozen=True)
class SearchWindow:
    """Inclusive pixel rectangle to scan, clipped to the frame."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


def search_window_around(
    frame: Frame, box: BBox, margin: float | None
) -> SearchWindow:
    """Window covering ``box`` expanded by ``margin`` pixels on each side.

    ``margin=None`` (or infinity) means the whole frame.  The result is
    clipped to the frame bounds.
    """
    if margin is None or math.isinf(margin):
        return SearchWindow(0, 0, frame.width, frame.height)
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    m = _round_half_up(margin)
    x = _round_half_up(box.x)
    y = _round_half_up(box.y)
    w = _round_half_up(box.w)
    h = _round_half_up(box.h)
    return SearchWindow(
        max(0, x - m),
        max(0, y - m),
        min(frame.width, x + w + m),
        min(frame.height, y + h + m),
    )


class FrameIntegrals:
    """Summed-area tables for one frame, shared across every track.

    ``sum1``/``sum2`` are zero-padded cumulative sums of the pixels and
    squared pixels, so any rectangle's sum is four lookups.  Pixel
    values are 8-bit, so both tables are exact in float64.
    """

    def __init__(self, frame: Frame):
        px = frame.pixels.astype(np.float64)
        self.sum1 = np.zeros((frame.height + 1, frame.width + 1))
        self.sum2 = np.zeros((frame.height + 1, frame.width + 1))
        np.cumsum(np.cumsum(px, axis=0), axis=1, out=self.sum1[1:, 1:])
        np.cumsum(np.cumsum(px * px, axis=0), axis=1, out=self.sum2[1:, 1:])

    def window_sums(self, y0: int, x0: int, h: int, w: int, ny: int, nx: int):
        """Per-position sums of all h-by-w windows with top-left corners
        in the ny-by-nx grid starting at (y0, x0)."""

        def rect(table):
            return (
                table[y0 + h : y0 + h + ny, x0 + w : x0 + w + nx]
                - table[y0 + h : y0 + h + ny, x0 : x0 + nx]
                - table[y0 : y0 + ny, x0 + w : x0 + w + nx]
                + table[y0 : y0 + ny, x0 : x0 + nx]
            )

        return rect(self.sum1), rect(self.sum2)


def match_template(
    template: Template,
    frame: Frame,
    window: SearchWindow,
    integrals: FrameIntegrals | None = None,
) -> MatchResult:
    """Exhaustively score every placement inside ``window``.

    Ties go to the smaller y, then smaller x.  The winning position is
    rescored with ``ncc_score`` so the reported score matches a direct
    evaluation exactly.
    """
    h, w = template.height, template.width
    x0 = max(0, window.x0)
    y0 = max(0, window.y0)
    x1 = min(frame.width, window.x1)
    y1 = min(frame.height, window.y1)
    nx = x1 - x0 - w + 1
    ny = y1 - y0 - h + 1
    if nx <= 0 or ny <= 0:
        raise EmptySearchError(
            f"window {x1 - x0}x{y1 - y0} cannot hold a {w}x{h} template"
        )
    if integrals is None:
        integrals = FrameIntegrals(frame)

    px = frame.pixels[y0 : y0 + ny + h - 1, x0 : x0 + nx + w - 1].astype(np.float64)
    views = np.lib.stride_tricks.sliding_window_view(px, (h, w))
    # numerator: sum(t_unit * window) == sum(t_unit * (window - mean))
    # because t_unit sums to zero
    num = np.einsum("ijkl,kl->ij", views, template.unit)
    s1, s2 = integrals.window_sums(y0, x0, h, w, ny, nx)
    n = float(h * w)
    # n * var = n*sum(p^2) - sum(p)^2, exact for 8-bit pixels
    var_n = s2 * n - s1 * s1
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(var_n > 0, num * np.sqrt(n) / np.sqrt(var_n), 0.0)
    flat = int(np.argmax(scores))  # first occurrence: smaller y wins, then x
    by, bx = divmod(flat, nx)
    pos = Point(float(x0 + bx), float(y0 + by))
    return MatchResult(position=pos, score=ncc_score(template, frame, pos))


def advance_track(
    template: Template,
    prev_position: Point,
    frame: Frame,
    margin: float | None,
    integrals: FrameIntegrals | None = None,
) -> MatchResult:
    """Relocate the template near its previous top-left placement.

    Scans the template footprint at ``prev_position`` expanded by
    ``margin`` pixels per side (margin 0 leaves exactly one candidate;
    None or infinity searches the whole frame); raises EmptySearchError
    when the clipped window cannot hold the template.
    """
    footprint = BBox(
        prev_position.x, prev_position.y, float(template.width), float(template.height)
    )
    window = search_window_around(frame, footprint, margin)
    return match_template(template, frame, window, integrals)
