"""Frame-by-frame tracking engine.

Step order within a frame is fixed: predict, gate+associate, update matched
tracks (including the identity statistic), rectify falsified tracks, age or
remove unmatched tracks, spawn new tracks from unmatched high-score
detections, then report the active set.  Every identity decision the engine
makes is emitted as an event object so a run can be audited afterwards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core_types import (
    BoundingBox,
    Detection,
    FeatureRing,
    Track,
    TrackerConfig,
    TrackGuardError,
    TrackStatus,
)
from collections import deque

from . import association, identity, motion


class PipelineError(TrackGuardError):
    pass


@dataclass(frozen=True)
class BirthEvent:
    track_id: int
    frame: int


@dataclass(frozen=True)
class RemovalEvent:
    track_id: int
    frame: int


@dataclass
class FrameResult:
    """Per-frame output: active boxes plus every event raised this frame."""

    frame: int
    outputs: list[tuple[int, BoundingBox, float]]
    events: list = field(default_factory=list)


@dataclass
class RunSummary:
    frames: int = 0
    births: int = 0
    removals: int = 0
    falsifications: int = 0
    recoveries: int = 0
    reassignments: int = 0


class Tracker:
    """Stateful multi-object tracker.

    The identity modules can be toggled independently, except that
    rectification depends on falsification events and cannot run without the
    detector.
    """

    def __init__(self, config: TrackerConfig, image_size: tuple[int, int], *,
                 use_ami: bool = True, use_idsd: bool = True, use_idsr: bool = True):
        config.validate()
        width, height = image_size
        if width <= 0 or height <= 0:
            raise PipelineError(f"image size must be positive, got {image_size}")
        if use_idsr and not use_idsd:
            raise PipelineError("rectification requires the switch detector (idsr needs idsd)")
        self.config = config
        self.image_diag = math.hypot(float(width), float(height))
        self.use_ami = use_ami
        self.use_idsd = use_idsd
        self.use_idsr = use_idsr
        self.tracks: list[Track] = []
        self.identity_trace: list[tuple[int, int, float, float]] = []
        self._next_id = 1
        self._frame = 0
        self._summary = RunSummary()

    # -- helpers -----------------------------------------------------------

    def _allocate_id(self) -> int:
        tid = self._next_id
        self._next_id += 1
        return tid

    def _new_track(self, det: Detection, frame: int) -> Track:
        track = Track(
            id=self._allocate_id(),
            motion=motion.kf_init(det.box),
            feature_queue=FeatureRing(self.config.feature_cap),
            cost_queue=deque(maxlen=self.config.costq_cap),
            status=TrackStatus.ACTIVE,
            last_update=frame,
            score=det.score,
            birth_frame=frame,
        )
        if det.embedding is not None:
            track.feature_queue.push(frame, det.embedding)
        return track

    def _validate_step(self, frame: int, detections: list[Detection]) -> None:
        if frame != self._frame + 1:
            raise PipelineError(
                f"frames must be contiguous and increasing: expected {self._frame + 1}, got {frame}"
            )
        for i, det in enumerate(detections):
            if det.frame != frame:
                raise PipelineError(
                    f"detection {i} carries frame {det.frame}, expected {frame}"
                )
            if det.score >= self.config.tau and det.embedding is None:
                raise PipelineError(
                    f"high-score detection {i} at frame {frame} has no embedding"
                )

    # -- main loop ---------------------------------------------------------

    def step(self, frame: int, detections: list[Detection]) -> FrameResult:
        """Consume one frame of detections and return the frame's result."""
        self._validate_step(frame, detections)
        self._frame = frame
        cfg = self.config
        events: list = []

        live = [t for t in self.tracks if t.status in (TrackStatus.ACTIVE, TrackStatus.LOST)]

        # 1. predict
        for track, state in zip(live, motion.kf_predict_batch([t.motion for t in live])):
            track.motion = state

        # 2-3. gate and associate
        match = association.associate_two_stage(
            live, detections, cfg, self.image_diag, use_ami=self.use_ami
        )

        # 4. committed matches: motion update, status, appearance, identity
        matched_pairs = [(live[ti], detections[dj]) for ti, dj in match.matches]
        try:
            updated = motion.kf_update_batch(
                [t.motion for t, _ in matched_pairs], [d.box for _, d in matched_pairs]
            )
        except motion.MotionError:
            # some innovation covariance degenerated; resolve track by track
            updated = []
            for t, d in matched_pairs:
                try:
                    updated.append(motion.kf_update(t.motion, d.box))
                except motion.MotionError:
                    updated.append(motion.kf_init(d.box))
        assigned: dict[int, Track] = {}
        track_det: dict[int, int] = {}
        falsified: list[Track] = []
        for (ti, dj), state in zip(match.matches, updated):
            track = live[ti]
            det = detections[dj]
            track.motion = state
            track.status = TrackStatus.ACTIVE
            track.lost_frames = 0
            track.last_update = frame
            track.score = det.score
            assigned[dj] = track
            track_det[track.id] = dj
            if det.embedding is not None:
                identity.push_feature(track, frame, det.embedding, cfg.sample_period)
                if self.use_idsd:
                    event = identity.idsd_update(track, det.embedding, frame, cfg)
                    if track.cost_queue:
                        self.identity_trace.append(
                            (frame, track.id, track.cost_queue[-1], track.tspec)
                        )
                    if event is not None:
                        events.append(event)
                        self._summary.falsifications += 1
                        falsified.append(track)

        # 5. rectify falsified tracks, ascending id
        released: list[int] = []
        claimed: set[int] = set()
        if self.use_idsr:
            pending = {t.id for t in falsified}
            for track in sorted(falsified, key=lambda t: t.id):
                pending.discard(track.id)
                own_det = track_det.get(track.id)
                own_emb = detections[own_det].embedding if own_det is not None else None
                outcome = identity.idsr_rectify(
                    track, detections, frame, cfg, self._allocate_id,
                    excluded=frozenset(claimed), current_embedding=own_emb,
                )
                events.append(outcome)
                if outcome.kind is identity.RectificationKind.RECOVERED:
                    self._summary.recoveries += 1
                    target = outcome.detection_index
                    claimed.add(target)
                    holder = assigned.get(target)
                    if holder is not None and holder is not track:
                        if holder.id in pending:
                            # the impostor is itself awaiting rectification:
                            # strip its claim and let its own turn resolve it
                            track_det.pop(holder.id, None)
                        else:
                            holder.status = TrackStatus.REMOVED
                            events.append(RemovalEvent(track_id=holder.id, frame=frame))
                            self._summary.removals += 1
                            track_det.pop(holder.id, None)
                    if own_det is not None and own_det != target:
                        # the detection this track was wrongly following is
                        # free again and may spawn a fresh track below
                        assigned.pop(own_det, None)
                        released.append(own_det)
                    assigned[target] = track
                    track_det[track.id] = target
                else:
                    self._summary.reassignments += 1
                    track_det[track.id] = track_det.pop(outcome.track_id, None)
        elif falsified:
            # detector on, rectifier off: falsified tracks stop associating
            # and age out through the lost path
            for track in falsified:
                track.status = TrackStatus.LOST

        # 6. unmatched tracks age; stale ones are removed
        for ti in match.unmatched_tracks:
            track = live[ti]
            if track.status is TrackStatus.REMOVED:
                continue
            track.status = TrackStatus.LOST
            track.lost_frames += 1
            if track.lost_frames > cfg.max_lost:
                track.status = TrackStatus.REMOVED
                events.append(RemovalEvent(track_id=track.id, frame=frame))
                self._summary.removals += 1

        # 7. births from unmatched (or freshly released) high-score detections,
        #    minus anything a recovery claimed this frame
        birth_pool = sorted((set(match.unmatched_high) | set(released)) - claimed)
        born: list[Track] = []
        for dj in birth_pool:
            det = detections[dj]
            if det.score < cfg.tau:
                continue
            track = self._new_track(det, frame)
            born.append(track)
            events.append(BirthEvent(track_id=track.id, frame=frame))
            self._summary.births += 1

        # 8. output the active set; prune removed tracks
        self.tracks = [t for t in self.tracks if t.status is not TrackStatus.REMOVED] + born
        outputs = [
            (t.id, motion.state_box(t.motion), t.score)
            for t in self.tracks
            if t.status is TrackStatus.ACTIVE
        ]
        outputs.sort(key=lambda item: item[0])
        self._summary.frames += 1
        return FrameResult(frame=frame, outputs=outputs, events=events)

    def finalize(self) -> RunSummary:
        """Return run totals; the tracker itself stays usable."""
        return self._summary


def run_sequence(config: TrackerConfig, image_size: tuple[int, int],
                 detections_by_frame: dict[int, list[Detection]], *,
                 use_ami: bool = True, use_idsd: bool = True, use_idsr: bool = True,
                 last_frame: int | None = None):
    """Drive a Tracker over a whole sequence.

    Frames 1..last_frame are stepped contiguously; frames absent from the
    input are treated as having no detections.  Returns (frame results,
    tracker) so callers can reach the identity trace and summary.
    """
    if last_frame is None:
        last_frame = max(detections_by_frame, default=0)
    tracker = Tracker(config, image_size, use_ami=use_ami, use_idsd=use_idsd, use_idsr=use_idsr)
    results = []
    for frame in range(1, last_frame + 1):
        results.append(tracker.step(frame, detections_by_frame.get(frame, [])))
    return results, tracker
