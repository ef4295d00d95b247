"""Command-line interface: track, simulate, eval.

`track` runs the full pipeline over a detection file plus embedding sidecar
and writes the result file, the identity event log, and the identity-trace
figure.  `simulate` renders a scenario script into such inputs.  `eval`
scores a result file against ground truth (optionally with the event log)
and writes the report plus the switch-timeline figure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import figures, metrics, mot_io, simulator
from .core_types import TrackerConfig, TrackGuardError, load_config
from .pipeline import run_sequence


def _parse_image_size(value: str) -> tuple[int, int]:
    w, sep, h = value.lower().partition("x")
    try:
        if not sep:
            raise ValueError
        width, height = int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"image size must look like 1920x1080, got {value!r}"
        ) from None
    if width <= 0 or height <= 0:
        raise argparse.ArgumentTypeError(f"image size must be positive, got {value!r}")
    return width, height


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackguard",
        description="multi-object tracker with id-switch detection and rectification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    track = sub.add_parser("track", help="run the tracker over a detection file")
    track.add_argument("--detections", required=True, help="MOT detection file")
    track.add_argument("--embeddings", required=True, help="embedding sidecar file")
    track.add_argument("--image-size", required=True, type=_parse_image_size,
                       metavar="WxH", help="frame size in pixels, e.g. 1920x1080")
    track.add_argument("--config", help="key=value config file (defaults apply if omitted)")
    track.add_argument("--output-dir", default=".", help="directory for output files")
    track.add_argument("--no-ami", action="store_true",
                       help="disable ambiguous-match pruning")
    track.add_argument("--no-idsd", action="store_true",
                       help="disable id-switch detection (requires --no-idsr)")
    track.add_argument("--no-idsr", action="store_true",
                       help="disable id-switch rectification")
    track.add_argument("--no-figures", action="store_true",
                       help="skip rendering the identity-trace figure")

    sim = sub.add_parser("simulate", help="render a scenario script to a dataset")
    sim.add_argument("--script", required=True, help="scenario script file")
    sim.add_argument("--output-dir", default=".", help="directory for the dataset")
    sim.add_argument("--seed", type=int, help="override the script's random seed")

    ev = sub.add_parser("eval", help="score results against ground truth")
    ev.add_argument("--results", required=True, help="tracker result file")
    ev.add_argument("--gt", required=True, help="ground-truth file")
    ev.add_argument("--events", help="identity event log (enables recovery scoring)")
    ev.add_argument("--output-dir", default=".", help="directory for the report")
    ev.add_argument("--no-figures", action="store_true",
                    help="skip rendering the switch-timeline figure")
    return parser


def cmd_track(args) -> int:
    config = load_config(args.config) if args.config else TrackerConfig()
    config.validate()
    detections = mot_io.parse_detections(args.detections)
    flat = [det for frame in sorted(detections) for det in detections[frame]]
    high = sum(1 for det in flat if det.score >= config.tau)
    embeddings = mot_io.parse_embeddings(args.embeddings, expected_rows={len(flat), high})
    mot_io.attach_embeddings(detections, embeddings, config.tau)

    results, tracker = run_sequence(
        config, args.image_size, detections,
        use_ami=not args.no_ami,
        use_idsd=not args.no_idsd,
        use_idsr=not args.no_idsr,
    )
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    mot_io.write_results(results, out / "results.txt")
    events = [ev for result in results for ev in result.events]
    mot_io.write_events(events, out / "events.txt")
    if not args.no_figures:
        figures.render_identity_traces(
            tracker.identity_trace, events, config, out / "identity_traces.png"
        )
    summary = tracker.finalize()
    print(
        f"frames={summary.frames} births={summary.births} "
        f"removals={summary.removals} falsifications={summary.falsifications} "
        f"recoveries={summary.recoveries} reassignments={summary.reassignments}"
    )
    return 0


def cmd_simulate(args) -> int:
    script = simulator.load_scenario(args.script)
    paths = simulator.emit_dataset(script, args.output_dir, seed=args.seed)
    for name in ("detections", "embeddings", "gt"):
        print(f"{name}={paths[name]}")
    return 0


def cmd_eval(args) -> int:
    results = mot_io.parse_results(args.results)
    gt = mot_io.parse_gt(args.gt)
    mappings = metrics.match_frames(results, gt)
    if args.events:
        events = mot_io.parse_events(args.events)
        report = metrics.recovery_report(mappings, events)
    else:
        events = []
        report = metrics.basic_report(mappings)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = metrics.write_report(report, out / "report.txt",
                                have_events=bool(args.events))
    sys.stdout.write(text)
    if not args.no_figures:
        figures.render_switch_timeline(mappings, events, out / "switch_timeline.png")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "track" and args.no_idsd and not args.no_idsr:
        parser.error("--no-idsd requires --no-idsr: rectification needs the detector")
    handlers = {"track": cmd_track, "simulate": cmd_simulate, "eval": cmd_eval}
    try:
        return handlers[args.command](args)
    except TrackGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
