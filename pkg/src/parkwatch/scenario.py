"""Deterministic synthetic scenes with analytically known event logs.

Actors are textured rectangles moving over a flat background along
keyframed center trajectories (linear interpolation, held ends).  A
scenario emits three artifacts from one (script, seed) pair: rendered
frames, a detection CSV with seeded center jitter, and the expected
alarm-event log computed from the script alone.

The expected log replays the pipeline's documented rules on analytic
geometry, never the tracker: between merges a track sits on its actor's
rendered box (plus the constant cut offset left by the last template
rebuild), at merges it snaps to the jittered detection box.  That
replay is exact as long as the scene keeps the correlation argmax
trivially unique, which script validation enforces: non-overlapping
actors, everything inside frame bounds, and per-frame movement within
the search margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BBox, Frame, Point, Roi, bbox_center, bbox_iou, roi_contains
from .detections import Detection, DetectionSet, format_detections
from .motion import AlarmEvent, EventKind, write_events
from .pgm import frame_filename, write_pgm
from .pipeline import PipelineConfig


class ScriptError(ValueError):
    """Scenario script is invalid or violates the oracle's assumptions."""


@dataclass(frozen=True)
class Actor:
    """One scripted vehicle: a w-by-h textured rectangle.

    keyframes give (frame, center) anchors; the center holds before the
    first and after the last, and interpolates linearly in between.
    """

    name: str
    width: int
    height: int
    texture_seed: int
    keyframes: tuple[tuple[int, tuple[float, float]], ...]
    confidence: float = 0.9
    class_id: int = 0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ScriptError(f"actor {self.name}: size must be at least 2x2")
        if not self.keyframes:
            raise ScriptError(f"actor {self.name}: needs at least one keyframe")
        frames = [f for f, _ in self.keyframes]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ScriptError(f"actor {self.name}: keyframe frames must strictly increase")
        if not (0.0 <= self.confidence <= 1.0):
            raise ScriptError(f"actor {self.name}: confidence outside [0,1]")


@dataclass(frozen=True)
class DetectorModel:
    """Synthetic detector: every actor yields one detection per frame,
    its center jittered by clipped Gaussian noise."""

    jitter_sigma: float = 0.5

    def __post_init__(self):
        if self.jitter_sigma < 0:
            raise ScriptError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")


@dataclass(frozen=True)
class ScenarioScript:
    width: int
    height: int
    fps: float
    duration: int
    roi: Roi
    actors: tuple[Actor, ...]
    detector: DetectorModel = field(default_factory=DetectorModel)
    background: int = 60
    texture_low: int = 0
    texture_high: int = 255

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ScriptError("frame size must be positive")
        if self.duration < 1:
            raise ScriptError("duration must be at least 1 frame")
        if self.fps <= 0:
            raise ScriptError("fps must be positive")
        names = [a.name for a in self.actors]
        if len(set(names)) != len(names):
            raise ScriptError("actor names must be unique")
        if not (0 <= self.background <= 255):
            raise ScriptError("background must be an 8-bit value")
        if not (0 <= self.texture_low <= self.texture_high <= 255):
            raise ScriptError("texture range must satisfy 0 <= low <= high <= 255")


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


def center_at(actor: Actor, frame_index: int) -> tuple[float, float]:
    """Actor center at a frame: held ends, linear interpolation between."""
    kf = actor.keyframes
    if frame_index <= kf[0][0]:
        return kf[0][1]
    if frame_index >= kf[-1][0]:
        return kf[-1][1]
    for (f0, (x0, y0)), (f1, (x1, y1)) in zip(kf, kf[1:]):
        if f0 <= frame_index <= f1:
            t = frame_index - f0
            span = f1 - f0
            return (x0 + (x1 - x0) * t / span, y0 + (y1 - y0) * t / span)
    raise AssertionError("keyframes are ordered; unreachable")


def actor_box_at(actor: Actor, frame_index: int) -> BBox:
    """Ground-truth float box (center minus half size)."""
    cx, cy = center_at(actor, frame_index)
    return BBox(cx - actor.width / 2, cy - actor.height / 2, actor.width, actor.height)


def rendered_origin(actor: Actor, frame_index: int) -> tuple[int, int]:
    """Integer top-left pixel the renderer stamps the texture at."""
    b = actor_box_at(actor, frame_index)
    return _round(b.x), _round(b.y)


def _texture(actor: Actor, script: ScenarioScript) -> np.ndarray:
    rng = np.random.default_rng(actor.texture_seed)
    return rng.integers(
        script.texture_low, script.texture_high + 1,
        size=(actor.height, actor.width), dtype=np.uint8,
    )


def validate_script(script: ScenarioScript) -> None:
    """Reject scripts the analytic event oracle cannot cover.

    Actors must stay fully inside the frame (with a guard band wide
    enough that jittered detection boxes stay inside too) and never
    overlap; both are load-bearing for the expected log (overlap would
    let detections cross-match and corrupt template content, and an
    out-of-frame detection box cannot seed a template).
    """
    sigma = script.detector.jitter_sigma
    guard = math.ceil(2.0 * sigma + 0.5) if sigma > 0 else 0
    for t in range(script.duration):
        boxes = []
        for actor in script.actors:
            ox, oy = rendered_origin(actor, t)
            if (
                ox < guard
                or oy < guard
                or ox + actor.width > script.width - guard
                or oy + actor.height > script.height - guard
            ):
                raise ScriptError(
                    f"actor {actor.name} leaves frame bounds (guard {guard}px) at frame {t}"
                )
            boxes.append((actor.name, BBox(ox, oy, actor.width, actor.height)))
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if bbox_iou(boxes[i][1], boxes[j][1]) > 0.0:
                    raise ScriptError(
                        f"actors {boxes[i][0]} and {boxes[j][0]} overlap at frame {t}"
                    )


def render_frame(script: ScenarioScript, frame_index: int,
                 textures: dict[str, np.ndarray] | None = None) -> Frame:
    if textures is None:
        textures = {a.name: _texture(a, script) for a in script.actors}
    px = np.full((script.height, script.width), script.background, dtype=np.uint8)
    for actor in script.actors:
        ox, oy = rendered_origin(actor, frame_index)
        if ox < 0 or oy < 0 or ox + actor.width > script.width or oy + actor.height > script.height:
            raise ScriptError(f"actor {actor.name} leaves frame bounds at frame {frame_index}")
        px[oy : oy + actor.height, ox : ox + actor.width] = textures[actor.name]
    return Frame(index=frame_index, pixels=px)


def frame_stream(script: ScenarioScript):
    """Yield every frame of the scenario without touching disk."""
    validate_script(script)
    textures = {a.name: _texture(a, script) for a in script.actors}
    for t in range(script.duration):
        yield render_frame(script, t, textures)


def _jitter_table(script: ScenarioScript, seed: int) -> np.ndarray:
    """Per (frame, actor) center offsets, drawn in a fixed order and
    clipped at two sigma."""
    rng = np.random.default_rng(seed)
    sigma = script.detector.jitter_sigma
    raw = rng.normal(0.0, sigma, size=(script.duration, len(script.actors), 2))
    return np.clip(raw, -2.0 * sigma, 2.0 * sigma)


def generate_detections(script: ScenarioScript, seed: int) -> DetectionSet:
    """Detection boxes for every actor at every frame, center-jittered."""
    jitter = _jitter_table(script, seed)
    by_frame: dict[int, list[Detection]] = {}
    for t in range(script.duration):
        rows = []
        for ai, actor in enumerate(script.actors):
            b = actor_box_at(actor, t)
            dx, dy = jitter[t, ai]
            box = BBox(b.x + float(dx), b.y + float(dy), b.w, b.h)
            rows.append(Detection(t, box, actor.class_id, actor.confidence))
        by_frame[t] = rows
    return DetectionSet(by_frame)


@dataclass
class _ReplayTrack:
    actor_index: int
    track_id: int
    prev_center: tuple[float, float]
    cut_offset: tuple[int, int]
    stationary_frames: int = 0
    illegal: bool = False
    missed_cycles: int = 0


def expected_events(
    script: ScenarioScript, seed: int, cfg: PipelineConfig | None = None
) -> list[AlarmEvent]:
    """Event log the pipeline must produce on this scenario, computed
    from script geometry alone.

    Replays the documented contract per frame: track boxes follow the
    rendered actor plus the cut offset from the last merge; stop timers
    accrue on displacements <= epsilon; merges snap boxes to jittered
    detections, spawn tracks for new eligible detections, and drop
    tracks missed twice.  Raises ScriptError if a scenario strays
    outside the replay's assumptions (a track failing to match its own
    actor's detection by IOU).
    """
    if cfg is None:
        cfg = PipelineConfig(fps=script.fps)
    validate_script(script)
    if cfg.search_margin_px is not None:
        for actor in script.actors:
            for t in range(1, script.duration):
                (x0, y0), (x1, y1) = rendered_origin(actor, t - 1), rendered_origin(actor, t)
                if max(abs(x1 - x0), abs(y1 - y0)) > cfg.search_margin_px - 1:
                    raise ScriptError(
                        f"actor {actor.name} moves faster than the search margin "
                        f"allows at frame {t}"
                    )
    jitter = _jitter_table(script, seed)
    threshold = cfg.motion.threshold_frames
    events: list[AlarmEvent] = []
    tracks: list[_ReplayTrack] = []
    next_id = 0

    def tracked_box(tr: _ReplayTrack, t: int) -> BBox:
        actor = script.actors[tr.actor_index]
        ox, oy = rendered_origin(actor, t)
        return BBox(
            float(ox + tr.cut_offset[0]),
            float(oy + tr.cut_offset[1]),
            actor.width,
            actor.height,
        )

    def detection_box(ai: int, t: int) -> BBox:
        b = actor_box_at(script.actors[ai], t)
        dx, dy = jitter[t, ai]
        return BBox(b.x + float(dx), b.y + float(dy), b.w, b.h)

    def eligible(ai: int, t: int) -> bool:
        actor = script.actors[ai]
        if actor.confidence < cfg.conf_threshold:
            return False
        if actor.class_id not in cfg.allowed_classes:
            return False
        return roi_contains(script.roi, bbox_center(detection_box(ai, t)))

    for t in range(script.duration):
        frame_events: list[AlarmEvent] = []
        survivors: list[_ReplayTrack] = []
        for tr in tracks:
            box = tracked_box(tr, t)
            center = bbox_center(box)
            d = math.hypot(center.x - tr.prev_center[0], center.y - tr.prev_center[1])
            if d > cfg.epsilon_px:
                if tr.illegal:
                    frame_events.append(
                        AlarmEvent(EventKind.ILLEGAL_END, t, tr.track_id, box,
                                   tr.stationary_frames / cfg.fps)
                    )
                tr.illegal = False
                tr.stationary_frames = 0
            else:
                tr.stationary_frames += 1
                if not tr.illegal and tr.stationary_frames >= threshold:
                    tr.illegal = True
                    frame_events.append(
                        AlarmEvent(EventKind.ILLEGAL_START, t, tr.track_id, box,
                                   tr.stationary_frames / cfg.fps)
                    )
            tr.prev_center = (center.x, center.y)
            if not roi_contains(script.roi, center):
                frame_events.append(
                    AlarmEvent(EventKind.TRACK_DROPPED, t, tr.track_id, box,
                               tr.stationary_frames / cfg.fps)
                )
                continue
            survivors.append(tr)
        tracks = survivors

        if t % cfg.redetect_interval == 0:
            live_actor_indices = {tr.actor_index for tr in tracks}
            still: list[_ReplayTrack] = []
            for tr in tracks:
                if eligible(tr.actor_index, t):
                    det_box = detection_box(tr.actor_index, t)
                    if bbox_iou(tracked_box(tr, t), det_box) <= cfg.iou_threshold:
                        raise ScriptError(
                            f"actor {script.actors[tr.actor_index].name} drifts from its "
                            f"own detection at frame {t}; replay assumptions broken"
                        )
                    c = bbox_center(det_box)
                    ox, oy = rendered_origin(script.actors[tr.actor_index], t)
                    tr.prev_center = (c.x, c.y)
                    tr.cut_offset = (_round(det_box.x) - ox, _round(det_box.y) - oy)
                    tr.missed_cycles = 0
                    still.append(tr)
                else:
                    tr.missed_cycles += 1
                    if tr.missed_cycles >= 2:
                        frame_events.append(
                            AlarmEvent(EventKind.TRACK_DROPPED, t, tr.track_id,
                                       tracked_box(tr, t), tr.stationary_frames / cfg.fps)
                        )
                    else:
                        still.append(tr)
            tracks = still
            # new tracks spawn in detection order: confidence descending,
            # script order on ties (the detection set's stored order)
            order = sorted(
                range(len(script.actors)),
                key=lambda ai: (-script.actors[ai].confidence, ai),
            )
            for ai in order:
                if ai in live_actor_indices or not eligible(ai, t):
                    continue
                det_box = detection_box(ai, t)
                c = bbox_center(det_box)
                ox, oy = rendered_origin(script.actors[ai], t)
                tr = _ReplayTrack(
                    actor_index=ai,
                    track_id=next_id,
                    prev_center=(c.x, c.y),
                    cut_offset=(_round(det_box.x) - ox, _round(det_box.y) - oy),
                )
                next_id += 1
                tracks.append(tr)
                frame_events.append(
                    AlarmEvent(EventKind.TRACK_CREATED, t, tr.track_id, det_box, 0.0)
                )
        events.extend(sorted(frame_events, key=lambda e: e.track_id))
    return events


def render_scenario(
    script: ScenarioScript,
    seed: int,
    out_dir: str | Path,
    cfg: PipelineConfig | None = None,
) -> list[AlarmEvent]:
    """Write frames, detections.csv, roi.txt, and expected_events into
    ``out_dir``; returns the expected event list."""
    from .core import format_roi

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    validate_script(script)
    textures = {a.name: _texture(a, script) for a in script.actors}
    for t in range(script.duration):
        frame = render_frame(script, t, textures)
        write_pgm(out / frame_filename(t), frame.pixels)
    detections = generate_detections(script, seed)
    (out / "detections.csv").write_text(format_detections(detections), encoding="ascii")
    (out / "roi.txt").write_text(format_roi(script.roi), encoding="ascii")
    events = expected_events(script, seed, cfg)
    with open(out / "expected_events", "w", encoding="ascii") as fh:
        write_events(events, fh)
    return events


def _rect_roi(x0: float, y0: float, x1: float, y1: float) -> Roi:
    return Roi((Point(x0, y0), Point(x1, y0), Point(x1, y1), Point(x0, y1)))


def scenario_figure5() -> ScenarioScript:
    """Three-car no-parking scene with staggered stops and departures.

    Two cars (A, B) are already parked inside the zone and turn illegal
    together; a third (C) drives in, parks, and turns illegal later; B
    then drives off (illegal state removed) and leaves the zone; C
    later does the same; A stays illegal to the end.
    """
    return ScenarioScript(
        width=320,
        height=240,
        fps=25.0,
        duration=1000,
        roi=_rect_roi(20, 50, 240, 190),
        actors=(
            Actor("A", 40, 28, texture_seed=101, confidence=0.95,
                  keyframes=((0, (70.0, 110.0)),)),
            Actor("B", 40, 28, texture_seed=202, confidence=0.9,
                  keyframes=((0, (170.0, 110.0)),
                             (520, (170.0, 110.0)),
                             (550, (290.0, 110.0)))),
            Actor("C", 44, 30, texture_seed=303, confidence=0.85,
                  keyframes=((0, (120.0, 215.0)),
                             (430, (120.0, 215.0)),
                             (455, (120.0, 115.0)),
                             (930, (120.0, 115.0)),
                             (955, (120.0, 215.0)))),
        ),
        detector=DetectorModel(jitter_sigma=0.0),
    )


def scenario_low_contrast() -> ScenarioScript:
    """Figure-5 geometry with faint textures on a matched background.

    Texture amplitude is +-8 gray levels around the background, so raw
    pixel differences are tiny while mean-subtracted correlation still
    locks on; a stand-in for degraded imaging conditions.
    """
    base = scenario_figure5()
    return ScenarioScript(
        width=base.width,
        height=base.height,
        fps=base.fps,
        duration=base.duration,
        roi=base.roi,
        actors=base.actors,
        detector=base.detector,
        background=100,
        texture_low=92,
        texture_high=108,
    )


BUILTIN_SCRIPTS = {
    "figure5": scenario_figure5,
    "lowcontrast": scenario_low_contrast,
}


def parse_script(text: str) -> ScenarioScript:
    """Parse the plain-text scenario format.

    One ``key = value`` per line, '#' comments.  Keys: width, height,
    fps, duration, background, jitter_sigma, texture_low, texture_high,
    roi (comma-separated "x y" pairs), actor (repeatable:
    "NAME WxH seed=N conf=C [class=K]"), keyframe (repeatable:
    "NAME FRAME CX CY").
    """
    scalars: dict[str, str] = {}
    actor_specs: list[tuple[int, str]] = []
    keyframe_specs: list[tuple[int, str]] = []
    roi_spec: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ScriptError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "actor":
            actor_specs.append((lineno, value))
        elif key == "keyframe":
            keyframe_specs.append((lineno, value))
        elif key == "roi":
            roi_spec = value
        else:
            scalars[key] = value

    def scalar(name: str, conv, default=None):
        if name not in scalars:
            if default is None:
                raise ScriptError(f"missing required key {name!r}")
            return default
        try:
            return conv(scalars.pop(name))
        except ValueError as exc:
            raise ScriptError(f"bad value for {name!r}: {exc}") from exc

    width = scalar("width", int)
    height = scalar("height", int)
    fps = scalar("fps", float, 25.0)
    duration = scalar("duration", int)
    background = scalar("background", int, 60)
    sigma = scalar("jitter_sigma", float, 0.5)
    texture_low = scalar("texture_low", int, 0)
    texture_high = scalar("texture_high", int, 255)
    if scalars:
        raise ScriptError(f"unknown keys: {', '.join(sorted(scalars))}")
    if roi_spec is None:
        raise ScriptError("missing required key 'roi'")

    verts = []
    for pair in roi_spec.split(","):
        parts = pair.split()
        if len(parts) != 2:
            raise ScriptError(f"roi: expected 'x y' pairs, got {pair.strip()!r}")
        verts.append(Point(float(parts[0]), float(parts[1])))
    roi = Roi(tuple(verts))

    actors: dict[str, dict] = {}
    for lineno, spec in actor_specs:
        parts = spec.split()
        if len(parts) < 3:
            raise ScriptError(f"line {lineno}: actor needs 'NAME WxH seed=N conf=C'")
        name = parts[0]
        if name in actors:
            raise ScriptError(f"line {lineno}: duplicate actor {name!r}")
        size = parts[1].split("x")
        if len(size) != 2:
            raise ScriptError(f"line {lineno}: size must look like 40x28")
        fields = {"class": "0"}
        for extra in parts[2:]:
            k, _, v = extra.partition("=")
            if k not in ("seed", "conf", "class") or not v:
                raise ScriptError(f"line {lineno}: unknown actor field {extra!r}")
            fields[k] = v
        if "seed" not in fields or "conf" not in fields:
            raise ScriptError(f"line {lineno}: actor needs seed= and conf=")
        try:
            actors[name] = {
                "width": int(size[0]),
                "height": int(size[1]),
                "seed": int(fields["seed"]),
                "conf": float(fields["conf"]),
                "class": int(fields["class"]),
                "keyframes": [],
            }
        except ValueError as exc:
            raise ScriptError(f"line {lineno}: {exc}") from exc

    for lineno, spec in keyframe_specs:
        parts = spec.split()
        if len(parts) != 4:
            raise ScriptError(f"line {lineno}: keyframe needs 'NAME FRAME CX CY'")
        name = parts[0]
        if name not in actors:
            raise ScriptError(f"line {lineno}: keyframe for unknown actor {name!r}")
        try:
            actors[name]["keyframes"].append(
                (int(parts[1]), (float(parts[2]), float(parts[3])))
            )
        except ValueError as exc:
            raise ScriptError(f"line {lineno}: {exc}") from exc

    built = []
    for name, a in actors.items():
        if not a["keyframes"]:
            raise ScriptError(f"actor {name!r} has no keyframes")
        built.append(
            Actor(
                name=name,
                width=a["width"],
                height=a["height"],
                texture_seed=a["seed"],
                keyframes=tuple(sorted(a["keyframes"])),
                confidence=a["conf"],
                class_id=a["class"],
            )
        )
    return ScenarioScript(
        width=width,
        height=height,
        fps=fps,
        duration=duration,
        roi=roi,
        actors=tuple(built),
        detector=DetectorModel(jitter_sigma=sigma),
        background=background,
        texture_low=texture_low,
        texture_high=texture_high,
    )


def load_script(path: str | Path) -> ScenarioScript:
    with open(path, "r", encoding="ascii") as fh:
        return parse_script(fh.read())
