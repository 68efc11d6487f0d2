"""Frame loop tying tracking, re-detection, and motion analysis together.

Every frame, each live track is relocated by template matching and its
motion state updated; tracks whose center leaves the ROI are dropped.
At every redetect_interval-th frame the current detections are merged
in: matched tracks inherit their timers onto the fresh box, unmatched
detections inside the ROI spawn tracks, and tracks missed twice in a
row die.

Sync mode runs everything on one thread with the merge applied right
after the scheduled frame's step, so output is byte-deterministic.
Async mode runs detection lookups on a second worker and merges them at
the barrier between frame steps, recording how late each merge landed.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .association import associate, inherit_timing
from .core import BBox, Frame, Point, Roi, bbox_center, roi_contains
from .detections import Detection, filter_detections
from .motion import (
    AlarmEvent,
    EventKind,
    MotionConfig,
    MotionState,
    Phase,
    initial_state,
    update_motion_state,
)
from .ncc import (
    EmptySearchError,
    FrameIntegrals,
    OutOfBoundsError,
    Template,
    ZeroVarianceError,
    advance_track,
    make_template,
)
from .pgm import frame_filename, write_pgm


class SequencingError(ValueError):
    """Frame arrived out of order."""


@dataclass
class Track:
    """One tracked vehicle, owned exclusively by the tracking worker."""

    id: int
    box: BBox
    template: Template
    motion: MotionState
    last_confirmed_frame: int
    missed_cycles: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    conf_threshold: float = 0.6
    iou_threshold: float = 0.5
    epsilon_px: float = 2.0
    tau_seconds: float = 15.0
    fps: float = 25.0
    redetect_interval: int = 25
    search_margin_px: float | None = 16
    ncc_min_score: float = 0.5
    allowed_classes: frozenset[int] = frozenset({0})
    mode: str = "sync"

    def __post_init__(self):
        if not (0.0 <= self.conf_threshold <= 1.0):
            raise ValueError(f"conf_threshold must be in [0,1], got {self.conf_threshold}")
        if not (0.0 <= self.iou_threshold <= 1.0):
            raise ValueError(f"iou_threshold must be in [0,1], got {self.iou_threshold}")
        if self.redetect_interval < 1:
            raise ValueError(f"redetect_interval must be >= 1, got {self.redetect_interval}")
        if self.search_margin_px is not None and self.search_margin_px < 0:
            raise ValueError(f"search_margin_px must be >= 0, got {self.search_margin_px}")
        if not (-1.0 <= self.ncc_min_score <= 1.0):
            raise ValueError(f"ncc_min_score must be in [-1,1], got {self.ncc_min_score}")
        if self.mode not in ("sync", "async"):
            raise ValueError(f"mode must be sync or async, got {self.mode!r}")
        # range checks for epsilon/fps/tau live in MotionConfig
        self.motion

    @property
    def motion(self) -> MotionConfig:
        return MotionConfig(epsilon=self.epsilon_px, fps=self.fps, tau=self.tau_seconds)


@dataclass
class PipelineState:
    tracks: list[Track] = field(default_factory=list)
    next_track_id: int = 0
    frame_index: int = -1
    event_log: list[AlarmEvent] = field(default_factory=list)


def step(state: PipelineState, frame: Frame, roi: Roi, cfg: PipelineConfig) -> PipelineState:
    """Advance every live track by one frame.

    A track whose best match scores below ncc_min_score (or whose
    search window collapsed) keeps its previous box for the frame, so a
    parked car hidden by occlusion still accrues its stop timer.
    """
    if frame.index != state.frame_index + 1:
        raise SequencingError(
            f"expected frame {state.frame_index + 1}, got {frame.index}"
        )
    state.frame_index = frame.index
    if not state.tracks:
        return state

    integrals = FrameIntegrals(frame)
    kept: list[Track] = []
    for track in state.tracks:
        try:
            result = advance_track(
                track.template,
                Point(track.box.x, track.box.y),
                frame,
                cfg.search_margin_px,
                integrals,
            )
        except EmptySearchError:
            result = None
        if result is not None and result.score >= cfg.ncc_min_score:
            track.box = BBox(result.position.x, result.position.y, track.box.w, track.box.h)
        center = bbox_center(track.box)
        track.motion, events = update_motion_state(
            track.motion, center, frame.index, cfg.motion, track.id, track.box
        )
        state.event_log.extend(events)
        if not roi_contains(roi, center):
            state.event_log.append(
                AlarmEvent(
                    EventKind.TRACK_DROPPED,
                    frame.index,
                    track.id,
                    track.box,
                    track.motion.stationary_frames / cfg.fps,
                )
            )
            continue
        kept.append(track)
    state.tracks = kept
    return state


def _fresh_template(frame: Frame, box: BBox) -> Template | None:
    try:
        return make_template(frame, box)
    except (ZeroVarianceError, OutOfBoundsError):
        return None


def redetect_merge(
    state: PipelineState,
    detections: Iterable[Detection],
    frame: Frame,
    roi: Roi,
    cfg: PipelineConfig,
) -> PipelineState:
    """Fold one round of detections into the track set.

    Detections are confidence/class filtered and must center inside the
    ROI.  Matched tracks move to the detection box with timers intact
    and get a template rebuilt from the current frame (the old template
    survives when the new patch is flat or out of bounds).  Leftover
    detections spawn tracks unless their patch is untrackable; tracks
    unmatched twice in a row are dropped.
    """
    eligible = [
        d
        for d in filter_detections(detections, cfg.conf_threshold, cfg.allowed_classes)
        if roi_contains(roi, bbox_center(d.box))
    ]
    result = associate(
        [(t.id, t.box) for t in state.tracks], eligible, cfg.iou_threshold
    )
    by_id = {t.id: t for t in state.tracks}

    for track_id, det_index, _ in result.matched:
        track = by_id[track_id]
        det = eligible[det_index]
        template = _fresh_template(frame, det.box)
        if template is not None:
            track.template = template
        track.box = det.box
        track.motion = inherit_timing(track.motion, det.box)
        track.last_confirmed_frame = state.frame_index
        track.missed_cycles = 0

    dropped: set[int] = set()
    for track_id in result.unmatched_tracks:
        track = by_id[track_id]
        track.missed_cycles += 1
        if track.missed_cycles >= 2:
            dropped.add(track_id)
            state.event_log.append(
                AlarmEvent(
                    EventKind.TRACK_DROPPED,
                    state.frame_index,
                    track.id,
                    track.box,
                    track.motion.stationary_frames / cfg.fps,
                )
            )
    state.tracks = [t for t in state.tracks if t.id not in dropped]

    for det_index in result.new_detections:
        det = eligible[det_index]
        template = _fresh_template(frame, det.box)
        if template is None:
            continue
        track = Track(
            id=state.next_track_id,
            box=det.box,
            template=template,
            motion=initial_state(bbox_center(det.box)),
            last_confirmed_frame=state.frame_index,
        )
        state.next_track_id += 1
        state.tracks.append(track)
        state.event_log.append(
            AlarmEvent(EventKind.TRACK_CREATED, state.frame_index, track.id, track.box, 0.0)
        )
    return state


@dataclass(frozen=True)
class MergeRecord:
    """One applied re-detection merge.

    lag is how many frame steps after the scheduled frame the merge
    landed; always 0 in sync mode.
    """

    scheduled_frame: int
    merged_before_frame: int

    @property
    def lag(self) -> int:
        return self.merged_before_frame - self.scheduled_frame - 1


@dataclass
class RunResult:
    events: list[AlarmEvent]
    state: PipelineState
    merges: list[MergeRecord]
    frames_processed: int
    elapsed_seconds: float


def _annotation_line(frame_index: int, track: Track, fps: float) -> str:
    b = track.box
    return json.dumps(
        {
            "frame": frame_index,
            "track_id": track.id,
            "box": [b.x, b.y, b.w, b.h],
            "phase": track.motion.phase.value,
            "stationary_seconds": track.motion.stationary_frames / fps,
        }
    )


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


def burn_boxes(frame: Frame, tracks: Iterable[Track]) -> np.ndarray:
    """Copy of the frame's pixels with 1-px track outlines burned in.

    White for tracked boxes, black once a track is illegal; boxes are
    clipped to the frame.
    """
    px = frame.pixels.copy()
    h, w = px.shape
    for track in tracks:
        value = 0 if track.motion.phase is Phase.ILLEGAL else 255
        x0 = max(0, _round(track.box.x))
        y0 = max(0, _round(track.box.y))
        x1 = min(w, _round(track.box.x) + _round(track.box.w))
        y1 = min(h, _round(track.box.y) + _round(track.box.h))
        if x1 <= x0 or y1 <= y0:
            continue
        px[y0, x0:x1] = value
        px[y1 - 1, x0:x1] = value
        px[y0:y1, x0] = value
        px[y0:y1, x1 - 1] = value
    return px


class _FrameFinalizer:
    """Flushes one frame's bookkeeping once its merges have landed.

    Sorts the frame's slice of the event log by track id so records
    appear in (frame, track_id) order, then writes annotation lines and
    the optional burned-in frame copy.
    """

    def __init__(
        self,
        state: PipelineState,
        cfg: PipelineConfig,
        annotations: IO[str] | None,
        burn_dir: str | Path | None,
    ):
        self.state = state
        self.cfg = cfg
        self.annotations = annotations
        self.burn_dir = Path(burn_dir) if burn_dir is not None else None
        self.slice_start = 0

    def finalize(self, frame: Frame) -> None:
        log = self.state.event_log
        log[self.slice_start :] = sorted(
            log[self.slice_start :], key=lambda e: e.track_id
        )
        self.slice_start = len(log)
        if self.annotations is not None:
            for track in self.state.tracks:
                self.annotations.write(
                    _annotation_line(frame.index, track, self.cfg.fps)
                )
                self.annotations.write("\n")
        if self.burn_dir is not None:
            write_pgm(
                self.burn_dir / frame_filename(frame.index),
                burn_boxes(frame, self.state.tracks),
            )


def run_pipeline(
    frames: Iterable[Frame],
    detections,
    roi: Roi,
    cfg: PipelineConfig,
    annotations: IO[str] | None = None,
    burn_dir: str | Path | None = None,
) -> RunResult:
    """Process a frame sequence end to end and return the event log.

    ``detections`` needs an ``at(frame_index)`` returning that frame's
    detection list.  In sync mode the merge for frame k applies
    immediately after stepping frame k; in async mode the lookup runs
    on a worker thread and merges at the next barrier between steps.
    """
    state = PipelineState()
    merges: list[MergeRecord] = []
    finalizer = _FrameFinalizer(state, cfg, annotations, burn_dir)
    frames_processed = 0
    prev_frame: Frame | None = None
    started = time.perf_counter()

    if cfg.mode == "sync":
        for frame in frames:
            step(state, frame, roi, cfg)
            if frame.index % cfg.redetect_interval == 0:
                redetect_merge(state, detections.at(frame.index), frame, roi, cfg)
                merges.append(MergeRecord(frame.index, frame.index + 1))
            finalizer.finalize(frame)
            frames_processed += 1
    else:
        pending: deque[tuple[int, Future]] = deque()
        with ThreadPoolExecutor(max_workers=1) as pool:

            def drain(block: bool) -> None:
                while pending and (block or pending[0][1].done()):
                    scheduled, future = pending.popleft()
                    redetect_merge(state, future.result(), prev_frame, roi, cfg)
                    merges.append(MergeRecord(scheduled, state.frame_index + 1))

            for frame in frames:
                if prev_frame is not None:
                    drain(block=False)
                    finalizer.finalize(prev_frame)
                step(state, frame, roi, cfg)
                if frame.index % cfg.redetect_interval == 0:
                    pending.append((frame.index, pool.submit(detections.at, frame.index)))
                prev_frame = frame
                frames_processed += 1
            if prev_frame is not None:
                drain(block=True)
                finalizer.finalize(prev_frame)

    elapsed = time.perf_counter() - started
    return RunResult(
        events=state.event_log,
        state=state,
        merges=merges,
        frames_processed=frames_processed,
        elapsed_seconds=elapsed,
    )
