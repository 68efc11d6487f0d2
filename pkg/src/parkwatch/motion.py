"""Per-track motion state machine and alarm events.

A track is Moving, Stationary, or Illegal.  Center displacement between
consecutive frames above epsilon means Moving and resets the stop
timer; at or below epsilon the timer accrues, and when it first reaches
ceil(tau * fps) frames the track turns Illegal and an IllegalStart
fires.  Movement while Illegal fires IllegalEnd.

Events serialize one JSON object per line with fields kind, frame,
track_id, box, stationary_seconds.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import IO, Iterable

from .core import BBox, Point


class Phase(enum.Enum):
    MOVING = "Moving"
    STATIONARY = "Stationary"
    ILLEGAL = "Illegal"


class EventKind(enum.Enum):
    TRACK_CREATED = "TrackCreated"
    ILLEGAL_START = "IllegalStart"
    ILLEGAL_END = "IllegalEnd"
    TRACK_DROPPED = "TrackDropped"


@dataclass(frozen=True)
class MotionConfig:
    """Thresholds for the state machine.

    epsilon: displacement in pixels at or below which a track counts as
    stationary for the frame.  tau: stop duration in seconds that
    triggers the alarm, evaluated inclusively as ceil(tau * fps) frames.
    """

    epsilon: float = 2.0
    fps: float = 25.0
    tau: float = 15.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.fps <= 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")

    @property
    def threshold_frames(self) -> int:
        return math.ceil(self.tau * self.fps)


@dataclass(frozen=True)
class MotionState:
    """Snapshot of one track's motion bookkeeping.

    illegal_start_frame is set exactly while phase is Illegal.
    """

    phase: Phase
    stationary_frames: int
    illegal_start_frame: int | None
    last_center: Point

    def __post_init__(self):
        if self.stationary_frames < 0:
            raise ValueError("stationary_frames must be >= 0")
        if (self.illegal_start_frame is not None) != (self.phase is Phase.ILLEGAL):
            raise ValueError("illegal_start_frame is set exactly in the Illegal phase")


def initial_state(center: Point) -> MotionState:
    return MotionState(Phase.MOVING, 0, None, center)


@dataclass(frozen=True)
class AlarmEvent:
    kind: EventKind
    frame_index: int
    track_id: int
    box: BBox
    stationary_seconds: float


def displacement(prev_center: Point, cur_center: Point) -> float:
    """Euclidean distance between consecutive frame centers."""
    return math.hypot(cur_center.x - prev_center.x, cur_center.y - prev_center.y)


def update_motion_state(
    state: MotionState,
    cur_center: Point,
    frame_index: int,
    cfg: MotionConfig,
    track_id: int,
    box: BBox,
) -> tuple[MotionState, list[AlarmEvent]]:
    """Advance one track by one frame.

    track_id and box only flow into the emitted events.  For an
    IllegalEnd the reported stationary_seconds is the length of the
    stationary run being closed, not the post-reset zero.
    """
    d = displacement(state.last_center, cur_center)
    events: list[AlarmEvent] = []
    if d > cfg.epsilon:
        if state.phase is Phase.ILLEGAL:
            events.append(
                AlarmEvent(
                    EventKind.ILLEGAL_END,
                    frame_index,
                    track_id,
                    box,
                    state.stationary_frames / cfg.fps,
                )
            )
        new = MotionState(Phase.MOVING, 0, None, cur_center)
        return new, events
    frames = state.stationary_frames + 1
    if state.phase is Phase.ILLEGAL:
        return (
            MotionState(Phase.ILLEGAL, frames, state.illegal_start_frame, cur_center),
            events,
        )
    if frames >= cfg.threshold_frames:
        events.append(
            AlarmEvent(
                EventKind.ILLEGAL_START,
                frame_index,
                track_id,
                box,
                frames / cfg.fps,
            )
        )
        return MotionState(Phase.ILLEGAL, frames, frame_index, cur_center), events
    return MotionState(Phase.STATIONARY, frames, None, cur_center), events


def event_record(event: AlarmEvent) -> dict:
    b = event.box
    return {
        "kind": event.kind.value,
        "frame": event.frame_index,
        "track_id": event.track_id,
        "box": [b.x, b.y, b.w, b.h],
        "stationary_seconds": event.stationary_seconds,
    }


def format_event(event: AlarmEvent) -> str:
    return json.dumps(event_record(event))


def parse_event(line: str) -> AlarmEvent:
    rec = json.loads(line)
    x, y, w, h = rec["box"]
    return AlarmEvent(
        kind=EventKind(rec["kind"]),
        frame_index=int(rec["frame"]),
        track_id=int(rec["track_id"]),
        box=BBox(float(x), float(y), float(w), float(h)),
        stationary_seconds=float(rec["stationary_seconds"]),
    )


def write_events(events: Iterable[AlarmEvent], out: IO[str]) -> None:
    for event in events:
        out.write(format_event(event))
        out.write("\n")


def read_events(source: IO[str]) -> list[AlarmEvent]:
    return [parse_event(line) for line in source if line.strip()]
