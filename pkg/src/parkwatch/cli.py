"""Command line entry point with run / anchors / simulate subcommands.

Exit codes: 0 success, 1 usage error (bad flags or flag values), 2 data
error (missing or malformed input files).  Tuning values merge with
rightmost-wins precedence: built-in defaults, then the --config file,
then explicit command-line flags.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .anchors import DegenerateInputError, extract_aspect_ratios, kmeans_1d, validate_separation
from .core import InvalidBoxError, InvalidRoiError, load_roi
from .detections import DetectionParseError, load_detections
from .motion import write_events
from .pgm import PgmFormatError, iter_frames
from .pipeline import PipelineConfig, SequencingError, run_pipeline
from .scenario import BUILTIN_SCRIPTS, ScriptError, load_script, render_scenario

USAGE_ERROR = 1
DATA_ERROR = 2
SEPARATION_ERROR = 3

_DATA_ERRORS = (
    DetectionParseError,
    InvalidRoiError,
    InvalidBoxError,
    PgmFormatError,
    ScriptError,
    SequencingError,
    DegenerateInputError,
    OSError,
)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this tool reserves 2 for data
    errors, so usage failures exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _parse_margin(value: str) -> float | None:
    if value.lower() in ("inf", "none", "full"):
        return None
    return float(value)


def _parse_classes(value: str) -> frozenset[int]:
    try:
        return frozenset(int(v) for v in value.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"classes must be comma-separated integers: {exc}")


# flag name -> (PipelineConfig field, converter)
_TUNING = {
    "conf": ("conf_threshold", float),
    "iou": ("iou_threshold", float),
    "eps": ("epsilon_px", float),
    "tau": ("tau_seconds", float),
    "fps": ("fps", float),
    "redetect": ("redetect_interval", int),
    "margin": ("search_margin_px", _parse_margin),
    "ncc_min": ("ncc_min_score", float),
    "classes": ("allowed_classes", _parse_classes),
    "mode": ("mode", str),
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` lines; '#' starts a comment."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in _TUNING:
                raise ValueError(
                    f"{path}: line {lineno}: unknown key {key!r} "
                    f"(expected one of {', '.join(sorted(_TUNING))})"
                )
            values[key] = value.strip()
    return values


def _build_config(args) -> PipelineConfig:
    merged: dict[str, object] = {}
    if args.config is not None:
        try:
            raw = parse_config_file(args.config)
            for key, text in raw.items():
                field, conv = _TUNING[key]
                merged[field] = conv(text)
            PipelineConfig(**merged)
        except (ValueError, argparse.ArgumentTypeError, OSError) as exc:
            raise _ConfigFileError(str(exc)) from exc
    # flags are declared with SUPPRESS defaults, so presence on the
    # namespace means the user typed the flag; this keeps an explicit
    # '--margin inf' (value None) able to override a config file
    for key, (field, _) in _TUNING.items():
        if hasattr(args, key):
            merged[field] = getattr(args, key)
    return PipelineConfig(**merged)


class _ConfigFileError(ValueError):
    """Bad config file contents (a data error, not a usage error)."""


def _add_tuning_flags(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps untyped flags off the namespace entirely, which lets
    # _build_config treat '--margin inf' (parsed to None) as an override
    d = PipelineConfig()
    s = argparse.SUPPRESS
    parser.add_argument("--mode", choices=("sync", "async"), default=s,
                        help=f"scheduling mode (default {d.mode})")
    parser.add_argument("--fps", type=float, default=s,
                        help=f"frames per second (default {d.fps:g})")
    parser.add_argument("--conf", type=float, default=s,
                        help=f"detection confidence threshold (default {d.conf_threshold:g})")
    parser.add_argument("--iou", type=float, default=s,
                        help=f"association IOU threshold (default {d.iou_threshold:g})")
    parser.add_argument("--eps", type=float, default=s,
                        help=f"stationary displacement threshold in px (default {d.epsilon_px:g})")
    parser.add_argument("--tau", type=float, default=s,
                        help=f"stop seconds before the alarm (default {d.tau_seconds:g})")
    parser.add_argument("--redetect", type=int, default=s,
                        help=f"re-detection interval in frames (default {d.redetect_interval})")
    parser.add_argument("--margin", type=_parse_margin, default=s,
                        help=f"search margin in px, or 'inf' for whole-frame (default {d.search_margin_px:g})")
    parser.add_argument("--ncc-min", dest="ncc_min", type=float, default=s,
                        help=f"minimum match score before a track is held in place (default {d.ncc_min_score:g})")
    parser.add_argument("--classes", type=_parse_classes, default=s,
                        help="comma-separated allowed class ids (default 0)")


def _cmd_run(args) -> int:
    cfg = _build_config(args)
    roi = load_roi(args.roi)
    detections = load_detections(args.detections)
    frames = iter_frames(args.frames)

    annotations = None
    burn_dir = None
    try:
        if args.annotate is not None:
            annotate_dir = Path(args.annotate)
            annotate_dir.mkdir(parents=True, exist_ok=True)
            annotations = open(annotate_dir / "annotations", "w", encoding="ascii")
            if args.burn:
                burn_dir = annotate_dir
        result = run_pipeline(frames, detections, roi, cfg,
                              annotations=annotations, burn_dir=burn_dir)
    finally:
        if annotations is not None:
            annotations.close()

    if args.events is not None:
        with open(args.events, "w", encoding="ascii") as fh:
            write_events(result.events, fh)
    else:
        write_events(result.events, sys.stdout)
    rate = result.frames_processed / result.elapsed_seconds if result.elapsed_seconds > 0 else float("inf")
    print(
        f"processed {result.frames_processed} frames in {result.elapsed_seconds:.2f}s "
        f"({rate:.1f} fps), {len(result.events)} events, {len(result.merges)} merges",
        file=sys.stderr,
    )
    return 0


def _cmd_anchors(args) -> int:
    detections = load_detections(args.boxes)
    boxes = [d.box for frame in detections.frames for d in detections.at(frame)]
    ratios = extract_aspect_ratios(boxes, height_over_width=(args.ratio_convention == "h-over-w"))
    result = kmeans_1d(ratios, args.k)
    counts = np.bincount(np.asarray(result.assignments), minlength=args.k)
    for i, center in enumerate(result.centers):
        print(f"center {i}: {center:.6g} (count {counts[i]})")
    print(f"wcss: {result.wcss:.6g}")
    warnings = validate_separation(result, args.min_sep)
    for warning in warnings:
        print(f"warning: {warning}")
    if warnings and args.strict:
        return SEPARATION_ERROR
    return 0


def _cmd_simulate(args) -> int:
    if args.script.startswith("builtin:"):
        name = args.script[len("builtin:"):]
        if name not in BUILTIN_SCRIPTS:
            raise ScriptError(
                f"unknown builtin scenario {name!r} "
                f"(available: {', '.join(sorted(BUILTIN_SCRIPTS))})"
            )
        script = BUILTIN_SCRIPTS[name]()
    else:
        script = load_script(args.script)
    events = render_scenario(script, args.seed, args.out)
    print(
        f"wrote {script.duration} frames, detections.csv, roi.txt and "
        f"{len(events)} expected events to {args.out}",
        file=sys.stderr,
    )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="parkwatch",
                     description="No-parking-zone monitoring over grayscale frame sequences.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="process frames and emit alarm events")
    run.add_argument("--frames", required=True, help="directory of frame_NNNNNN.pgm files")
    run.add_argument("--detections", required=True, help="detection CSV file")
    run.add_argument("--roi", required=True, help="ROI polygon file, one 'x y' vertex per line")
    run.add_argument("--config", help="key = value file of tuning defaults")
    run.add_argument("--events", help="write the event log here instead of stdout")
    run.add_argument("--annotate", help="directory for per-frame track annotations")
    run.add_argument("--burn", action="store_true",
                     help="with --annotate, also write frame copies with box outlines")
    _add_tuning_flags(run)
    run.set_defaults(func=_cmd_run)

    anchors = sub.add_parser("anchors", help="cluster box aspect ratios into anchor centers")
    anchors.add_argument("boxes", help="ground-truth boxes in detection CSV format")
    anchors.add_argument("--k", type=int, default=2, help="number of clusters (default 2)")
    anchors.add_argument("--min-sep", dest="min_sep", type=float, default=0.1,
                         help="minimum center separation before warning (default 0.1)")
    anchors.add_argument("--ratio-convention", dest="ratio_convention",
                         choices=("h-over-w", "w-over-h"), default="h-over-w",
                         help="aspect ratio definition (default h-over-w)")
    anchors.add_argument("--strict", action="store_true",
                         help="exit nonzero when any separation warning fires")
    anchors.set_defaults(func=_cmd_anchors)

    simulate = sub.add_parser("simulate", help="render a synthetic scenario with ground truth")
    simulate.add_argument("--script", required=True,
                          help="builtin:NAME or a scenario script file "
                               f"(builtins: {', '.join(sorted(BUILTIN_SCRIPTS))})")
    simulate.add_argument("--seed", type=int, default=0, help="detection jitter seed (default 0)")
    simulate.add_argument("--out", required=True, help="output directory")
    simulate.set_defaults(func=_cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (_ConfigFileError,) + _DATA_ERRORS as exc:
        print(f"parkwatch: error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except ValueError as exc:
        # remaining ValueErrors are range violations from explicit flags
        print(f"parkwatch: error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
