"""IOU matching of fresh detections against existing tracks.

Greedy highest-IOU-first: repeatedly take the best remaining pair with
IOU strictly above the threshold, ties broken by lower track id then
lower detection index.  Matched tracks inherit their timing state
unchanged onto the new box.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import BBox, bbox_center, bbox_iou
from .detections import Detection
from .motion import MotionState


@dataclass(frozen=True)
class Association:
    """Outcome of one matching round.

    matched is in greedy pick order (descending IOU); new_detections
    and unmatched_tracks keep their input order.
    """

    matched: tuple[tuple[int, int, float], ...]
    new_detections: tuple[int, ...]
    unmatched_tracks: tuple[int, ...]


def associate(
    track_boxes: list[tuple[int, BBox]],
    detections: list[Detection],
    iou_threshold: float,
) -> Association:
    ids = [tid for tid, _ in track_boxes]
    if len(set(ids)) != len(ids):
        raise ValueError("track ids must be unique")
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")

    candidates = []
    for tid, tbox in track_boxes:
        for di, det in enumerate(detections):
            iou = bbox_iou(tbox, det.box)
            if iou > iou_threshold:
                candidates.append((iou, tid, di))
    # sorting by (-iou, tid, di) and sweeping equals repeated
    # take-the-best with the documented tie-break
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

    matched = []
    used_tracks: set[int] = set()
    used_dets: set[int] = set()
    for iou, tid, di in candidates:
        if tid in used_tracks or di in used_dets:
            continue
        matched.append((tid, di, iou))
        used_tracks.add(tid)
        used_dets.add(di)

    new_detections = tuple(
        di for di in range(len(detections)) if di not in used_dets
    )
    unmatched_tracks = tuple(tid for tid in ids if tid not in used_tracks)
    return Association(tuple(matched), new_detections, unmatched_tracks)


def inherit_timing(old_state: MotionState, new_box: BBox) -> MotionState:
    """Carry a matched track's timers onto its fresh detection box.

    Phase, stationary_frames and illegal_start_frame are copied
    unchanged; only the reference center moves to the new box, so the
    next displacement is measured from where the track now sits.
    """
    return MotionState(
        phase=old_state.phase,
        stationary_frames=old_state.stationary_frames,
        illegal_start_frame=old_state.illegal_start_frame,
        last_center=bbox_center(new_box),
    )
