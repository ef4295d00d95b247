"""Readers and writers for the on-disk formats.

Detection, ground-truth, and result files follow the MOT Challenge CSV
layout.  Embeddings travel in a separate header-prefixed text sidecar aligned
to detection-file row order.  Identity events get a small CSV log of their
own.  All parsers reject malformed input outright, naming the 1-based line;
nothing is repaired silently, so a file that loads is a file that round-trips.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_types import BoundingBox, Detection, TrackGuardError, as_embedding
from .identity import FalsificationEvent, RectificationKind, RectificationOutcome
from .pipeline import BirthEvent, FrameResult, RemovalEvent


class FileFormatError(TrackGuardError):
    pass


def _fail(path, lineno: int, problem: str):
    raise FileFormatError(f"{path}: line {lineno}: {problem}")


def _data_lines(path):
    """Yield (1-based line number, stripped text), skipping blank lines."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise FileFormatError(f"{path}: cannot read: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if text:
                yield lineno, text


def _parse_float(path, lineno: int, text: str, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        _fail(path, lineno, f"{what} is not a number: {text!r}")
    if not np.isfinite(value):
        _fail(path, lineno, f"{what} is not finite: {text!r}")
    return value


def _parse_int(path, lineno: int, text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        _fail(path, lineno, f"{what} is not an integer: {text!r}")


def _parse_box(path, lineno: int, fields: list[str]) -> BoundingBox:
    left, top, width, height = (
        _parse_float(path, lineno, f, name)
        for f, name in zip(fields, ("left", "top", "width", "height"))
    )
    try:
        return BoundingBox(left, top, width, height)
    except ValueError as exc:
        _fail(path, lineno, str(exc))


# -- detections --------------------------------------------------------------

def parse_detections(path) -> dict[int, list[Detection]]:
    """Read a MOT detection file into per-frame lists.

    Rows keep file order within a frame; frame numbers must be
    non-decreasing.  Embeddings are attached separately.
    """
    by_frame: dict[int, list[Detection]] = {}
    last_frame = 0
    for lineno, text in _data_lines(path):
        fields = text.split(",")
        if len(fields) != 10:
            _fail(path, lineno, f"expected 10 comma-separated fields, got {len(fields)}")
        frame = _parse_int(path, lineno, fields[0], "frame")
        if frame < 1:
            _fail(path, lineno, f"frame must be >= 1, got {frame}")
        if frame < last_frame:
            _fail(path, lineno, f"frame {frame} appears after frame {last_frame}")
        last_frame = frame
        if fields[1].strip() != "-1":
            _fail(path, lineno, f"detection rows must carry id -1, got {fields[1]!r}")
        box = _parse_box(path, lineno, fields[2:6])
        score = _parse_float(path, lineno, fields[6], "score")
        if not 0.0 <= score <= 1.0:
            _fail(path, lineno, f"score must be in [0, 1], got {score}")
        by_frame.setdefault(frame, []).append(Detection(frame=frame, box=box, score=score))
    return by_frame


def detection_row(frame: int, track_id: int, box: BoundingBox, score: float) -> str:
    return (
        f"{frame},{track_id},{box.left:.2f},{box.top:.2f},"
        f"{box.width:.2f},{box.height:.2f},{score:.6f},-1,-1,-1"
    )


def write_detections(by_frame: dict[int, list[Detection]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in sorted(by_frame):
            for det in by_frame[frame]:
                fh.write(detection_row(frame, -1, det.box, det.score) + "\n")


# -- embedding sidecar -------------------------------------------------------

def parse_embeddings(path, expected_rows=None) -> list[np.ndarray]:
    """Read the embedding sidecar: "rows,D,text" header, then one vector per line.

    `expected_rows`, when given, is the collection of acceptable row counts
    (total detection rows, or high-score rows only).
    """
    lines = iter(_data_lines(path))
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise FileFormatError(f"{path}: line 1: missing sidecar header") from None
    fields = header.split(",")
    if len(fields) != 3:
        _fail(path, lineno, f"header must be rows,D,encoding; got {header!r}")
    rows = _parse_int(path, lineno, fields[0], "row count")
    dim = _parse_int(path, lineno, fields[1], "dimension")
    if rows < 0 or dim < 1:
        _fail(path, lineno, f"row count/dimension out of range: {rows},{dim}")
    if fields[2].strip() != "text":
        _fail(path, lineno, f"unsupported encoding {fields[2]!r} (only 'text')")
    embeddings: list[np.ndarray] = []
    for lineno, text in lines:
        parts = text.split()
        if len(parts) != dim:
            _fail(path, lineno, f"expected {dim} values, got {len(parts)}")
        values = [_parse_float(path, lineno, p, "component") for p in parts]
        try:
            embeddings.append(as_embedding(np.asarray(values, dtype=np.float64)))
        except ValueError as exc:
            _fail(path, lineno, str(exc))
    if len(embeddings) != rows:
        raise FileFormatError(
            f"{path}: header declares {rows} rows, file has {len(embeddings)}"
        )
    if expected_rows is not None:
        accepted = {expected_rows} if isinstance(expected_rows, int) else set(expected_rows)
        if rows not in accepted:
            raise FileFormatError(
                f"{path}: sidecar has {rows} rows, expected one of {sorted(accepted)}"
            )
    return embeddings


def write_embeddings(embeddings, path, dim: int | None = None) -> None:
    embeddings = list(embeddings)
    if embeddings:
        dim = embeddings[0].shape[0] if dim is None else dim
        if any(vec.shape != (dim,) for vec in embeddings):
            raise FileFormatError(f"embedding rows disagree with dimension {dim}")
    elif dim is None:
        raise FileFormatError("cannot write an empty sidecar without an explicit dimension")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(embeddings)},{dim},text\n")
        for vec in embeddings:
            fh.write(" ".join(f"{v:.9f}" for v in vec) + "\n")


def attach_embeddings(by_frame: dict[int, list[Detection]],
                      embeddings: list[np.ndarray], tau: float) -> None:
    """Attach sidecar vectors to detections by row order.

    A sidecar may cover every detection row or only the high-score ones
    (score >= tau); any other count is an error.
    """
    flat = [det for frame in sorted(by_frame) for det in by_frame[frame]]
    high = [det for det in flat if det.score >= tau]
    if len(embeddings) == len(flat):
        targets = flat
    elif len(embeddings) == len(high):
        targets = high
    else:
        raise FileFormatError(
            f"sidecar has {len(embeddings)} rows; detection file has "
            f"{len(flat)} rows ({len(high)} high-score)"
        )
    for det, vec in zip(targets, embeddings):
        det.embedding = vec


# -- results -----------------------------------------------------------------

def write_results(frame_results: list[FrameResult], path) -> None:
    """Write tracker outputs in MOT result format, ordered by frame then id."""
    with open(path, "w", encoding="utf-8") as fh:
        for result in sorted(frame_results, key=lambda r: r.frame):
            for track_id, box, score in sorted(result.outputs, key=lambda o: o[0]):
                fh.write(detection_row(result.frame, track_id, box, score) + "\n")


def parse_results(path) -> dict[int, list[tuple[int, BoundingBox, float]]]:
    """Read a result file back into per-frame (id, box, score) lists."""
    by_frame: dict[int, list[tuple[int, BoundingBox, float]]] = {}
    last_frame = 0
    for lineno, text in _data_lines(path):
        fields = text.split(",")
        if len(fields) != 10:
            _fail(path, lineno, f"expected 10 comma-separated fields, got {len(fields)}")
        frame = _parse_int(path, lineno, fields[0], "frame")
        if frame < 1:
            _fail(path, lineno, f"frame must be >= 1, got {frame}")
        if frame < last_frame:
            _fail(path, lineno, f"frame {frame} appears after frame {last_frame}")
        last_frame = frame
        track_id = _parse_int(path, lineno, fields[1], "track id")
        if track_id < 1:
            _fail(path, lineno, f"result rows need a track id >= 1, got {track_id}")
        box = _parse_box(path, lineno, fields[2:6])
        score = _parse_float(path, lineno, fields[6], "score")
        by_frame.setdefault(frame, []).append((track_id, box, score))
    return by_frame


# -- ground truth ------------------------------------------------------------

def parse_gt(path) -> dict[int, list[tuple[int, BoundingBox]]]:
    """Read a MOT ground-truth file (9 fields) into per-frame (id, box) lists."""
    by_frame: dict[int, list[tuple[int, BoundingBox]]] = {}
    last_frame = 0
    for lineno, text in _data_lines(path):
        fields = text.split(",")
        if len(fields) != 9:
            _fail(path, lineno, f"expected 9 comma-separated fields, got {len(fields)}")
        frame = _parse_int(path, lineno, fields[0], "frame")
        if frame < 1:
            _fail(path, lineno, f"frame must be >= 1, got {frame}")
        if frame < last_frame:
            _fail(path, lineno, f"frame {frame} appears after frame {last_frame}")
        last_frame = frame
        agent_id = _parse_int(path, lineno, fields[1], "agent id")
        if agent_id < 1:
            _fail(path, lineno, f"agent id must be >= 1, got {agent_id}")
        box = _parse_box(path, lineno, fields[2:6])
        by_frame.setdefault(frame, []).append((agent_id, box))
    return by_frame


def write_gt(by_frame: dict[int, list[tuple[int, BoundingBox]]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in sorted(by_frame):
            for agent_id, box in by_frame[frame]:
                fh.write(
                    f"{frame},{agent_id},{box.left:.2f},{box.top:.2f},"
                    f"{box.width:.2f},{box.height:.2f},1,1,1\n"
                )


# -- event log ---------------------------------------------------------------

@dataclass(frozen=True)
class ParsedEvent:
    """One event-log line, decoded.

    `track_id` is the acting track (for REASSIGN, the old id); `value` holds
    the kind-specific number: tspec for FALSIFY, cosine cost for RECOVER, the
    new id for REASSIGN, None otherwise.
    """

    frame: int
    kind: str
    track_id: int
    value: float | int | None = None


EVENT_KINDS = ("BIRTH", "REMOVE", "FALSIFY", "RECOVER", "REASSIGN")


def as_parsed(event) -> ParsedEvent:
    """Normalize an in-memory pipeline event to its ParsedEvent form."""
    if isinstance(event, ParsedEvent):
        return event
    if isinstance(event, BirthEvent):
        return ParsedEvent(frame=event.frame, kind="BIRTH", track_id=event.track_id)
    if isinstance(event, RemovalEvent):
        return ParsedEvent(frame=event.frame, kind="REMOVE", track_id=event.track_id)
    if isinstance(event, FalsificationEvent):
        return ParsedEvent(frame=event.frame, kind="FALSIFY",
                           track_id=event.track_id, value=event.tspec_at_flag)
    if isinstance(event, RectificationOutcome):
        if event.kind is RectificationKind.RECOVERED:
            return ParsedEvent(frame=event.frame, kind="RECOVER",
                               track_id=event.track_id, value=event.cost)
        return ParsedEvent(frame=event.frame, kind="REASSIGN",
                           track_id=event.track_id, value=event.new_id)
    raise TrackGuardError(f"cannot serialize event of type {type(event).__name__}")


def _event_line(event) -> str:
    ev = as_parsed(event)
    if ev.kind in ("BIRTH", "REMOVE"):
        return f"{ev.frame},{ev.kind},{ev.track_id}"
    if ev.kind in ("FALSIFY", "RECOVER"):
        return f"{ev.frame},{ev.kind},{ev.track_id},{ev.value:.6f}"
    return f"{ev.frame},REASSIGN,{ev.track_id},{ev.value}"


def write_events(events, path) -> None:
    """Write the identity event log, one line per event in the given order."""
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(_event_line(event) + "\n")


def parse_events(path) -> list[ParsedEvent]:
    events: list[ParsedEvent] = []
    last_frame = 0
    for lineno, text in _data_lines(path):
        fields = text.split(",")
        if len(fields) < 3:
            _fail(path, lineno, f"expected at least 3 comma-separated fields, got {len(fields)}")
        frame = _parse_int(path, lineno, fields[0], "frame")
        if frame < 1:
            _fail(path, lineno, f"frame must be >= 1, got {frame}")
        if frame < last_frame:
            _fail(path, lineno, f"frame {frame} appears after frame {last_frame}")
        last_frame = frame
        kind = fields[1]
        if kind not in EVENT_KINDS:
            _fail(path, lineno, f"unknown event kind {kind!r}")
        track_id = _parse_int(path, lineno, fields[2], "track id")
        want = 3 if kind in ("BIRTH", "REMOVE") else 4
        if len(fields) != want:
            _fail(path, lineno, f"{kind} events take {want} fields, got {len(fields)}")
        value: float | int | None = None
        if kind in ("FALSIFY", "RECOVER"):
            value = _parse_float(path, lineno, fields[3], "event value")
        elif kind == "REASSIGN":
            value = _parse_int(path, lineno, fields[3], "new id")
        events.append(ParsedEvent(frame=frame, kind=kind, track_id=track_id, value=value))
    return events
