"""Identity verification for tracks: switch detection and rectification.

The detector treats the oldest portion of a track's appearance history as
trusted and measures every new matched embedding against it.  The mean
cosine cost of the current embedding against that history goes into a ring
queue; the population variance of the queue is the falsification statistic.
A stable identity keeps the variance near zero even when the costs
themselves drift; a hijacked track mixes two cost levels and the variance
jumps.  Sustained excess over the threshold falsifies the track.

Rectification then consults the very first stored feature: if some current
detection still looks like the original target, the track snaps back to it
and keeps its id (the impostor track holding that detection is removed by
the pipeline); otherwise the trajectory continues under a fresh id.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core_types import Detection, Track, TrackerConfig, TrackGuardError, TrackStatus
from .association import cosine_distance
from .motion import kf_init


class InsufficientHistoryError(TrackGuardError):
    """Raised when a queue is too short for the requested statistic."""


@dataclass(frozen=True)
class FalsificationEvent:
    """A track whose identity statistic stayed above threshold too long."""

    track_id: int
    frame: int
    tspec_at_flag: float


class RectificationKind(Enum):
    RECOVERED = "recovered"
    REASSIGNED = "reassigned"


@dataclass(frozen=True)
class RectificationOutcome:
    """How a falsified track was resolved on the same frame."""

    kind: RectificationKind
    frame: int
    track_id: int
    detection_index: int | None = None
    cost: float | None = None
    new_id: int | None = None


# ---------------------------------------------------------------------------
# feature bookkeeping
# ---------------------------------------------------------------------------

def push_feature(track: Track, frame: int, embedding: np.ndarray, sample_period: int) -> bool:
    """Store the embedding if the sampling period elapsed (or queue is empty).

    Returns True when a feature was actually stored.
    """
    q = track.feature_queue
    if len(q) == 0 or frame - q.last_frame() >= sample_period:
        q.push(frame, embedding)
        return True
    return False


def mean_cosine_cost(f: np.ndarray, track: Track, history_frac: float) -> float:
    """Mean cosine cost of f against the oldest fraction of the feature queue.

    Uses floor(history_frac * queue_length) oldest features; invariant under
    positive rescaling of f.  Raises InsufficientHistoryError when that count
    is zero.
    """
    q = track.feature_queue
    n = math.floor(history_frac * len(q))
    if n <= 0:
        raise InsufficientHistoryError(
            f"feature queue of length {len(q)} gives no history at fraction {history_frac}"
        )
    fn = float(np.linalg.norm(f))
    if fn < 1e-12:
        raise TrackGuardError("cannot compare a zero-norm embedding")
    sims = (q.unit_matrix()[:n] @ f) / fn
    return 1.0 - float(np.add.reduce(sims)) / n


def tspec(track: Track) -> float:
    """Population variance of the track's cosine-cost queue.

    Exactly zero for a constant queue.  Raises on an empty queue.
    """
    q = track.cost_queue
    if not q:
        raise InsufficientHistoryError("cost queue is empty; statistic undefined")
    vals = list(q)
    if min(vals) == max(vals):
        return 0.0
    n = len(vals)
    mean = math.fsum(vals) / n
    return math.fsum((v - mean) ** 2 for v in vals) / n


# ---------------------------------------------------------------------------
# detection of identity switches
# ---------------------------------------------------------------------------

def idsd_update(track: Track, f: np.ndarray, frame: int,
                config: TrackerConfig) -> FalsificationEvent | None:
    """Advance the identity statistic for a track matched this frame.

    Appends the current mean cosine cost, recomputes the variance statistic,
    and maintains the consecutive above-threshold counter.  Falsifies the
    track (status change plus returned event) once the counter exceeds
    persist_frames.  Silently skips tracks whose feature queue is still
    shorter than min_history.
    """
    if len(track.feature_queue) < config.min_history:
        return None
    c = mean_cosine_cost(f, track, config.history_frac)
    track.cost_queue.append(c)
    track.tspec = tspec(track)
    if track.tspec > config.t_theta:
        track.above_count += 1
    else:
        track.above_count = 0
    if track.above_count > config.persist_frames:
        track.status = TrackStatus.FALSIFIED
        track.above_count = 0  # re-arm; rectification decides what happens next
        return FalsificationEvent(track_id=track.id, frame=frame, tspec_at_flag=track.tspec)
    return None


# ---------------------------------------------------------------------------
# rectification
# ---------------------------------------------------------------------------

def idsr_rectify(track: Track, detections: list[Detection], frame: int,
                 config: TrackerConfig, allocate_id, *,
                 excluded: frozenset[int] = frozenset(),
                 current_embedding: np.ndarray | None = None) -> RectificationOutcome:
    """Resolve a falsified track against the current frame's detections.

    Compares the oldest stored feature against every detection embedding
    (indices in ``excluded`` are skipped; the pipeline uses that to keep two
    recoveries from claiming one detection).  A hit below c_theta recovers
    the original identity: motion restarts from that detection, the cost
    queue clears, the feature queue is kept.  Otherwise the trajectory
    continues under a fresh id from ``allocate_id`` with both queues cleared,
    reseeded with ``current_embedding`` when given.  An empty feature queue
    degenerates to reassignment.
    """
    if track.status is not TrackStatus.FALSIFIED:
        raise TrackGuardError(f"track {track.id} is not falsified; nothing to rectify")

    best_index: int | None = None
    best_cost = math.inf
    if len(track.feature_queue) > 0:
        _, first_feature = track.feature_queue.oldest()
        for j, det in enumerate(detections):
            if j in excluded or det.embedding is None:
                continue
            c = cosine_distance(first_feature, det.embedding)
            if c < best_cost:
                best_cost = c
                best_index = j

    if best_index is not None and best_cost < config.c_theta:
        det = detections[best_index]
        track.motion = kf_init(det.box)
        track.cost_queue.clear()
        track.tspec = 0.0
        track.above_count = 0
        track.status = TrackStatus.ACTIVE
        track.lost_frames = 0
        track.last_update = frame
        track.score = det.score
        return RectificationOutcome(
            kind=RectificationKind.RECOVERED,
            frame=frame,
            track_id=track.id,
            detection_index=best_index,
            cost=best_cost,
        )

    old_id = track.id
    new_id = allocate_id()
    track.id = new_id
    track.feature_queue.clear()
    track.cost_queue.clear()
    track.tspec = 0.0
    track.above_count = 0
    track.status = TrackStatus.ACTIVE
    track.lost_frames = 0
    track.last_update = frame
    if current_embedding is not None:
        track.feature_queue.push(frame, current_embedding)
    return RectificationOutcome(
        kind=RectificationKind.REASSIGNED,
        frame=frame,
        track_id=old_id,
        new_id=new_id,
    )
