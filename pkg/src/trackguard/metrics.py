"""Identity scoring against ground truth.

Hypotheses are matched to ground truth per frame (one-to-one, IoU-gated),
then identity switches are counted per ground-truth identity with gap
tolerance.  On top of the raw switch count, the recovery report cross-reads
the event log to tell repaired switches apart from permanent ones, with the
latencies of detection and repair.  Raw IDSW cannot see the difference: a
repaired id flips the mapping one extra time and the count goes up, not
down.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mot_io
from .association import FORBIDDEN, iou_matrix, solve_assignment
from .core_types import BoundingBox, TrackGuardError


class MetricsError(TrackGuardError):
    pass


FrameMapping = dict[int, dict[int, int]]   # frame -> {hypothesis id -> gt id}


def match_frames(results: dict[int, list[tuple[int, BoundingBox, float]]],
                 gt: dict[int, list[tuple[int, BoundingBox]]],
                 iou_threshold: float = 0.5) -> FrameMapping:
    """Per-frame one-to-one matching of hypotheses to ground truth.

    Min-cost assignment on 1-IoU; pairs under the IoU threshold are
    forbidden and stay unmatched.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise MetricsError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    mappings: FrameMapping = {}
    for frame in sorted(set(results) | set(gt)):
        hyps = results.get(frame, [])
        truths = gt.get(frame, [])
        mapping: dict[int, int] = {}
        if hyps and truths:
            overlaps = iou_matrix([h[1] for h in hyps], [t[1] for t in truths])
            costs = 1.0 - overlaps
            costs[overlaps < iou_threshold] = FORBIDDEN
            assignment = solve_assignment(costs)
            for hi, ti in assignment.pairs:
                mapping[hyps[hi][0]] = truths[ti][0]
        mappings[frame] = mapping
    return mappings


def count_idsw(mappings: FrameMapping) -> int:
    """Identity switches: per gt id, count changes of the matched hypothesis.

    Gaps do not reset the comparison point, and a return to an earlier
    hypothesis counts as another switch (the standard convention: a repaired
    id raises the count by one instead of lowering it).
    """
    last: dict[int, int] = {}
    switches = 0
    for frame in sorted(mappings):
        for hyp_id, gt_id in mappings[frame].items():
            previous = last.get(gt_id)
            if previous is not None and previous != hyp_id:
                switches += 1
            last[gt_id] = hyp_id
    return switches


@dataclass(frozen=True)
class SwitchRecord:
    """One falsification, traced from mapping change to its resolution."""

    track_id: int
    gt_id: int | None            # the identity the track held before the switch
    switch_frame: int | None     # first frame the track's gt mapping changed
    falsify_frame: int
    recover_frame: int | None
    recovered: bool


@dataclass
class IdentityReport:
    idsw: int
    falsifications: int
    switches_recovered: int
    mean_detection_latency: float | None
    mean_recovery_latency: float | None
    timeline: list[SwitchRecord] = field(default_factory=list)


def _track_history(mappings: FrameMapping, track_id: int) -> list[tuple[int, int]]:
    return [
        (frame, mapping[track_id])
        for frame, mapping in sorted(mappings.items())
        if track_id in mapping
    ]


def _find_switch(history: list[tuple[int, int]], falsify_frame: int):
    """Latest mapping change before the falsification: (frame, prior gt id).

    Strictly before: same-frame rectification repairs the mapping before
    outputs are emitted, so a change observed at the falsification frame
    itself is the repair, not the switch.
    """
    switch = None
    for (_, prev_gid), (frame, gid) in zip(history, history[1:]):
        if frame >= falsify_frame:
            break
        if gid != prev_gid:
            switch = (frame, prev_gid)
    return switch


def recovery_report(mappings: FrameMapping, events) -> IdentityReport:
    """Score falsifications against the mapping timeline.

    A falsification counts as recovered iff the track issued RECOVER and its
    first matched frame afterwards maps back to the gt id it held before the
    switch window.  Detection latency is switch->falsify, recovery latency
    falsify->recover.
    """
    events = [
        ev if isinstance(ev, mot_io.ParsedEvent) else mot_io.as_parsed(ev)
        for ev in events
    ]
    known = {hyp for mapping in mappings.values() for hyp in mapping}
    timeline: list[SwitchRecord] = []
    detection_latencies: list[int] = []
    recovery_latencies: list[int] = []
    recovered_count = 0
    falsify_count = 0
    for i, ev in enumerate(events):
        if ev.kind != "FALSIFY":
            continue
        falsify_count += 1
        if ev.track_id not in known:
            raise MetricsError(
                f"event log references track {ev.track_id}, absent from the results"
            )
        history = _track_history(mappings, ev.track_id)
        switch = _find_switch(history, ev.frame)
        switch_frame, prior_gid = switch if switch else (None, None)
        if switch_frame is not None:
            detection_latencies.append(ev.frame - switch_frame)
        recover_frame = next(
            (
                later.frame for later in events[i:]
                if later.kind == "RECOVER" and later.track_id == ev.track_id
                and later.frame >= ev.frame
            ),
            None,
        )
        recovered = False
        if recover_frame is not None and prior_gid is not None:
            after = [gid for frame, gid in history if frame >= recover_frame]
            recovered = bool(after) and after[0] == prior_gid
        if recovered:
            recovered_count += 1
            recovery_latencies.append(recover_frame - ev.frame)
        timeline.append(SwitchRecord(
            track_id=ev.track_id,
            gt_id=prior_gid,
            switch_frame=switch_frame,
            falsify_frame=ev.frame,
            recover_frame=recover_frame,
            recovered=recovered,
        ))
    return IdentityReport(
        idsw=count_idsw(mappings),
        falsifications=falsify_count,
        switches_recovered=recovered_count,
        mean_detection_latency=_mean(detection_latencies),
        mean_recovery_latency=_mean(recovery_latencies),
        timeline=timeline,
    )


def _mean(values: list[int]) -> float | None:
    return float(np.mean(values)) if values else None


def basic_report(mappings: FrameMapping) -> IdentityReport:
    """Report without an event log: raw idsw only, recovery fields unknown."""
    return IdentityReport(
        idsw=count_idsw(mappings),
        falsifications=0,
        switches_recovered=0,
        mean_detection_latency=None,
        mean_recovery_latency=None,
    )


def format_report(report: IdentityReport, *, have_events: bool = True) -> str:
    """Flat key=value rendering; recovery fields are n/a without an event log."""
    def num(value):
        if value is None:
            return "n/a"
        return f"{value:.6f}" if isinstance(value, float) else str(value)

    lines = [f"idsw={report.idsw}"]
    if have_events:
        lines.append(f"falsifications={report.falsifications}")
        lines.append(f"switches_recovered={report.switches_recovered}")
        lines.append(f"mean_detection_latency={num(report.mean_detection_latency)}")
        lines.append(f"mean_recovery_latency={num(report.mean_recovery_latency)}")
        for k, record in enumerate(report.timeline, start=1):
            prefix = f"switch.{k}"
            lines.append(f"{prefix}.track={record.track_id}")
            lines.append(f"{prefix}.gt={num(record.gt_id)}")
            lines.append(f"{prefix}.switch_frame={num(record.switch_frame)}")
            lines.append(f"{prefix}.falsify_frame={record.falsify_frame}")
            lines.append(f"{prefix}.recover_frame={num(record.recover_frame)}")
            lines.append(f"{prefix}.recovered={'yes' if record.recovered else 'no'}")
    else:
        for name in ("falsifications", "switches_recovered",
                     "mean_detection_latency", "mean_recovery_latency"):
            lines.append(f"{name}=n/a")
    return "\n".join(lines) + "\n"


def write_report(report: IdentityReport, path, *, have_events: bool = True) -> str:
    text = format_report(report, have_events=have_events)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return text
