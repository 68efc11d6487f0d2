"""No-parking-zone surveillance over grayscale frame sequences.

Tracks detected vehicles with normalized cross-correlation template
matching, refreshes the track set from an external detection file every
N frames with IOU matching and timing inheritance, and raises alarm
events for vehicles stationary inside the ROI longer than the
configured stop time.
"""

from .anchors import ClusterResult, SeparationWarning, extract_aspect_ratios, kmeans_1d, validate_separation
from .association import Association, associate, inherit_timing
from .core import BBox, Frame, Point, Roi, bbox_center, bbox_iou, load_roi, parse_roi, roi_contains
from .detections import Detection, DetectionSet, filter_detections, load_detections, parse_detection_file
from .motion import (
    AlarmEvent,
    EventKind,
    MotionConfig,
    MotionState,
    Phase,
    displacement,
    read_events,
    update_motion_state,
    write_events,
)
from .ncc import MatchResult, SearchWindow, Template, advance_track, make_template, match_template, ncc_score
from .pgm import iter_frames, read_pgm, write_pgm
from .pipeline import PipelineConfig, PipelineState, RunResult, Track, redetect_merge, run_pipeline, step
from .scenario import (
    Actor,
    ScenarioScript,
    ScriptError,
    expected_events,
    frame_stream,
    generate_detections,
    render_scenario,
    scenario_figure5,
    scenario_low_contrast,
)

__version__ = "0.1.0"

__all__ = [
    "AlarmEvent",
    "Actor",
    "Association",
    "BBox",
    "ClusterResult",
    "Detection",
    "DetectionSet",
    "EventKind",
    "Frame",
    "MatchResult",
    "MotionConfig",
    "MotionState",
    "Phase",
    "PipelineConfig",
    "PipelineState",
    "Point",
    "Roi",
    "RunResult",
    "ScenarioScript",
    "ScriptError",
    "SearchWindow",
    "SeparationWarning",
    "Template",
    "Track",
    "advance_track",
    "associate",
    "bbox_center",
    "bbox_iou",
    "displacement",
    "expected_events",
    "extract_aspect_ratios",
    "filter_detections",
    "frame_stream",
    "generate_detections",
    "inherit_timing",
    "iter_frames",
    "kmeans_1d",
    "load_detections",
    "load_roi",
    "make_template",
    "match_template",
    "ncc_score",
    "parse_detection_file",
    "parse_roi",
    "read_events",
    "read_pgm",
    "redetect_merge",
    "render_scenario",
    "roi_contains",
    "run_pipeline",
    "scenario_figure5",
    "scenario_low_contrast",
    "step",
    "update_motion_state",
    "validate_separation",
    "write_events",
    "write_pgm",
]
