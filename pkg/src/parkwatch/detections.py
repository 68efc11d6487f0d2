"""Per-frame vehicle detections from CSV files or synthetic generators.

Detection CSV format: one record per line,

    frame,x,y,w,h,class,confidence

with pixel coordinates (origin top-left), comma-separated decimal fields.
Lines starting with '#' are comments; blank lines are ignored. Class 0 is
"car" by convention. A malformed line aborts parsing: silently skipping
records would corrupt downstream event timelines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping

from .core import BBox, InvalidBoxError


class DetectionParseError(ValueError):
    """Malformed detection CSV line; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class Detection:
    frame_index: int
    box: BBox
    class_id: int
    confidence: float

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be non-negative, got {self.frame_index}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")


class DetectionSet:
    """Immutable map from frame index to detections, ordered by descending confidence."""

    def __init__(self, by_frame: Mapping[int, Iterable[Detection]]):
        store: dict[int, tuple[Detection, ...]] = {}
        for frame_index, dets in by_frame.items():
            dets = tuple(dets)
            for d in dets:
                if d.frame_index != frame_index:
                    raise ValueError(f"detection for frame {d.frame_index} filed under frame {frame_index}")
            store[frame_index] = tuple(sorted(dets, key=lambda d: -d.confidence))
        self._by_frame = store

    @property
    def frames(self) -> tuple[int, ...]:
        return tuple(sorted(self._by_frame))

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_frame.values())

    def __eq__(self, other) -> bool:
        return isinstance(other, DetectionSet) and self._by_frame == other._by_frame

    def at(self, frame_index: int) -> list[Detection]:
        return list(self._by_frame.get(frame_index, ()))


def detections_at(src: DetectionSet, frame_index: int) -> list[Detection]:
    """Detections stored for a frame; empty for unknown or negative indices."""
    return src.at(frame_index)


def _parse_line(lineno: int, line: str) -> Detection:
    fields = line.split(",")
    if len(fields) != 7:
        raise DetectionParseError(lineno, f"expected 7 fields, got {len(fields)}")
    try:
        frame_index = int(fields[0])
        x, y, w, h = (float(v) for v in fields[1:5])
        class_id = int(fields[5])
        confidence = float(fields[6])
    except ValueError as exc:
        raise DetectionParseError(lineno, f"non-numeric field: {exc}") from exc
    if frame_index < 0:
        raise DetectionParseError(lineno, f"negative frame index {frame_index}")
    if not all(math.isfinite(v) for v in (x, y, w, h, confidence)):
        raise DetectionParseError(lineno, "non-finite value")
    if not (0.0 <= confidence <= 1.0):
        raise DetectionParseError(lineno, f"confidence {confidence} outside [0,1]")
    try:
        box = BBox(x, y, w, h)
    except InvalidBoxError as exc:
        raise DetectionParseError(lineno, str(exc)) from exc
    return Detection(frame_index, box, class_id, confidence)


def parse_detection_file(stream: IO[str] | str) -> DetectionSet:
    """Parse detection CSV text into a DetectionSet, grouped by frame."""
    text = stream if isinstance(stream, str) else stream.read()
    by_frame: dict[int, list[Detection]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        det = _parse_line(lineno, line)
        by_frame.setdefault(det.frame_index, []).append(det)
    return DetectionSet(by_frame)


def load_detections(path) -> DetectionSet:
    with open(path, "r", encoding="ascii") as fh:
        return parse_detection_file(fh)


def format_detections(dets: DetectionSet) -> str:
    """Serialize back to the CSV format (inverse of parse on well-formed input)."""
    lines = []
    for frame_index in dets.frames:
        for d in dets.at(frame_index):
            b = d.box
            lines.append(f"{d.frame_index},{b.x!r},{b.y!r},{b.w!r},{b.h!r},{d.class_id},{d.confidence!r}\n")
    return "".join(lines)


def filter_detections(dets: Iterable[Detection], conf_threshold: float,
                      allowed_classes: frozenset[int] | set[int]) -> list[Detection]:
    """Keep detections with confidence >= threshold and an allowed class, in order."""
    if not (0.0 <= conf_threshold <= 1.0):
        raise ValueError(f"conf_threshold must be in [0,1], got {conf_threshold}")
    return [d for d in dets if d.confidence >= conf_threshold and d.class_id in allowed_classes]
