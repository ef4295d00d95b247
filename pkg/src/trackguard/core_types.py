"""Shared domain types: boxes, detections, tracks, and the tracker config.

Everything downstream (association, identity checks, the pipeline) is built
on the types in this module.  Config files are flat ``key=value`` text so a
run can be reproduced from a single small file.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np


class TrackGuardError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(TrackGuardError):
    """Bad config file or out-of-range field value."""


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates, top-left origin."""

    left: float
    top: float
    width: float
    height: float

    def __post_init__(self):
        for name in ("left", "top", "width", "height"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"box field {name} is not finite: {v!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(
                f"box must have positive extent, got width={self.width} height={self.height}"
            )

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, height: float) -> "BoundingBox":
        return cls(cx - width / 2.0, cy - height / 2.0, width, height)

    @property
    def right(self) -> float:
        return self.left + self.width

    @property
    def bottom(self) -> float:
        return self.top + self.height

    @property
    def cx(self) -> float:
        return self.left + self.width / 2.0

    @property
    def cy(self) -> float:
        return self.top + self.height / 2.0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def aspect(self) -> float:
        return self.width / self.height

    def vector(self) -> np.ndarray:
        """Box as (cx, cy, w, h), the representation used by the gate."""
        return np.array([self.cx, self.cy, self.width, self.height], dtype=np.float64)


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

# Appearance embeddings are plain 1-D float64 arrays, unit-normalized at the
# ingest boundary (parser / simulator).  ``as_embedding`` is that boundary.
Embedding = np.ndarray


def as_embedding(values) -> np.ndarray:
    """Validate and L2-normalize a raw vector into an embedding.

    Raises ValueError on non-finite input or a norm too close to zero to
    normalize meaningfully.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"embedding must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding contains non-finite values")
    norm = float(np.linalg.norm(arr))
    if norm < 1e-12:
        raise ValueError("embedding norm is zero; cannot normalize")
    return arr / norm


@dataclass
class Detection:
    """One detector output: a box, a confidence score, optionally an embedding."""

    frame: int
    box: BoundingBox
    score: float
    embedding: Embedding | None = None

    def __post_init__(self):
        if self.frame < 1:
            raise ValueError(f"detection frame must be >= 1, got {self.frame}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")


# ---------------------------------------------------------------------------
# track state
# ---------------------------------------------------------------------------

class TrackStatus(Enum):
    ACTIVE = "active"
    LOST = "lost"
    FALSIFIED = "falsified"
    REMOVED = "removed"


@dataclass
class MotionState:
    """Kalman state: mean (cx, cy, aspect, h, and their velocities) + covariance."""

    mean: np.ndarray        # shape (8,)
    covariance: np.ndarray  # shape (8, 8)


class FeatureRing:
    """Fixed-capacity ring of (frame, embedding) pairs, oldest first.

    Backed by a preallocated row buffer so the stacked gallery matrix and its
    unit-normalized twin are maintained incrementally; the association cost
    rebuilds gallery distances every frame and must not pay a restack.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("feature ring capacity must be >= 1")
        self._capacity = capacity
        self._items: deque = deque(maxlen=capacity)
        self._buf: np.ndarray | None = None
        self._unit_buf: np.ndarray | None = None
        self._matrix: np.ndarray | None = None
        self._unit_matrix: np.ndarray | None = None

    def push(self, frame: int, embedding: Embedding) -> None:
        emb = np.asarray(embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise ValueError(f"embedding must be 1-D, got shape {emb.shape}")
        norm = float(np.linalg.norm(emb))
        if norm < 1e-12:
            raise ValueError("cannot store a zero-norm embedding")
        if self._buf is None or self._buf.shape[1] != emb.shape[0]:
            self._buf = np.empty((self._capacity, emb.shape[0]), dtype=np.float64)
            self._unit_buf = np.empty_like(self._buf)
        if len(self._items) == self._capacity:
            # ring is full: drop the oldest row to make space at the end
            self._buf[:-1] = self._buf[1:]
            self._unit_buf[:-1] = self._unit_buf[1:]
            row = self._capacity - 1
        else:
            row = len(self._items)
        self._buf[row] = emb
        self._unit_buf[row] = emb / norm
        self._items.append((frame, emb))
        self._matrix = None
        self._unit_matrix = None

    def clear(self) -> None:
        self._items.clear()
        self._matrix = None
        self._unit_matrix = None

    def matrix(self) -> np.ndarray:
        """Stacked embeddings, row 0 oldest.  Raises on an empty ring."""
        if not self._items:
            raise ValueError("feature ring is empty; no matrix to build")
        if self._matrix is None:
            self._matrix = self._buf[: len(self._items)].copy()
        return self._matrix

    def unit_matrix(self) -> np.ndarray:
        """Stacked embeddings with each row scaled to unit norm, row 0 oldest."""
        if not self._items:
            raise ValueError("feature ring is empty; no matrix to build")
        if self._unit_matrix is None:
            self._unit_matrix = self._unit_buf[: len(self._items)].copy()
        return self._unit_matrix

    def oldest(self) -> tuple[int, Embedding]:
        return self._items[0]

    def last_frame(self) -> int:
        return self._items[-1][0]

    def frames(self) -> list[int]:
        return [f for f, _ in self._items]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


@dataclass
class Track:
    """A single trajectory with motion, appearance history, and identity state."""

    id: int
    motion: MotionState
    feature_queue: FeatureRing
    cost_queue: deque
    status: TrackStatus = TrackStatus.ACTIVE
    tspec: float = 0.0
    above_count: int = 0
    last_update: int = 0
    lost_frames: int = 0
    score: float = 0.0
    birth_frame: int = 0


def check_track_invariants(track: Track, config: "TrackerConfig") -> None:
    """Assert the Track invariants; used by tests after pipeline steps."""
    assert track.id >= 1, f"track id must be positive, got {track.id}"
    assert len(track.feature_queue) <= config.feature_cap
    assert len(track.cost_queue) <= config.costq_cap
    assert track.tspec >= 0.0
    assert track.above_count >= 0
    assert track.lost_frames >= 0
    if track.tspec <= config.t_theta:
        assert track.above_count == 0, (
            f"above_count={track.above_count} with tspec={track.tspec} <= t_theta"
        )
    frames = track.feature_queue.frames()
    assert frames == sorted(frames), "feature queue frames must be in push order"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_INT_FIELDS = {
    "max_lost", "sample_period", "feature_cap", "costq_cap",
    "persist_frames", "min_history",
}


@dataclass(frozen=True)
class TrackerConfig:
    """Tunable parameters of the tracker.

    alpha           weight of the motion (IoU) term in cost fusion, in (0, 1)
    d_theta         ambiguous-match distance threshold, in (0, 1)
    rho             ambiguous-match dominance ratio, > 1
    tau             high-confidence detection score threshold, in [0, 1]
    t_theta         falsification threshold on the cost-variance statistic
    c_theta         recovery threshold on cosine cost
    max_lost        frames a track may stay lost before removal
    sample_period   frames between stored appearance features
    feature_cap     feature ring capacity
    costq_cap       cosine-cost ring capacity
    persist_frames  consecutive above-threshold frames tolerated before falsification
    history_frac    fraction of the feature queue (oldest part) treated as trusted history
    epsilon_gate    association gate on normalized box distance
    min_history     minimum feature-queue length before identity checking activates
    """

    alpha: float = 0.5
    d_theta: float = 0.2
    rho: float = 2.0
    tau: float = 0.6
    t_theta: float = 0.01
    c_theta: float = 0.1
    max_lost: int = 30
    sample_period: int = 5
    feature_cap: int = 30
    costq_cap: int = 30
    persist_frames: int = 10
    history_frac: float = 2.0 / 3.0
    epsilon_gate: float = 0.3
    min_history: int = 6

    def validate(self) -> None:
        def err(name, want, got):
            raise ConfigError(f"config field {name} must be {want}, got {got}")

        if not (0.0 < self.alpha < 1.0):
            err("alpha", "in the open interval (0, 1)", self.alpha)
        if not (0.0 < self.d_theta < 1.0):
            err("d_theta", "in the open interval (0, 1)", self.d_theta)
        if not self.rho > 1.0:
            err("rho", "> 1", self.rho)
        if not (0.0 <= self.tau <= 1.0):
            err("tau", "in [0, 1]", self.tau)
        if not self.t_theta >= 0.0:
            err("t_theta", ">= 0", self.t_theta)
        if not self.c_theta >= 0.0:
            err("c_theta", ">= 0", self.c_theta)
        if self.max_lost < 0:
            err("max_lost", ">= 0", self.max_lost)
        if self.sample_period < 1:
            err("sample_period", ">= 1", self.sample_period)
        if self.feature_cap < 1:
            err("feature_cap", ">= 1", self.feature_cap)
        if self.costq_cap < 1:
            err("costq_cap", ">= 1", self.costq_cap)
        if self.persist_frames < 0:
            err("persist_frames", ">= 0", self.persist_frames)
        if not (0.0 < self.history_frac <= 1.0):
            err("history_frac", "in (0, 1]", self.history_frac)
        if not self.epsilon_gate > 0.0:
            err("epsilon_gate", "> 0", self.epsilon_gate)
        if self.min_history < 1:
            err("min_history", ">= 1", self.min_history)


def parse_config_text(text: str, source: str = "<config>") -> TrackerConfig:
    """Parse flat ``key=value`` config text into a validated TrackerConfig."""
    known = {f.name for f in fields(TrackerConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        try:
            values[key] = int(val) if key in _INT_FIELDS else float(val)
        except ValueError:
            kind = "an integer" if key in _INT_FIELDS else "a number"
            raise ConfigError(f"{source}:{lineno}: field {key} must be {kind}, got {val!r}") from None
    config = TrackerConfig(**values)
    config.validate()
    return config


def load_config(path) -> TrackerConfig:
    """Load a TrackerConfig from a UTF-8 ``key=value`` file.

    Missing file raises ConfigError.  An empty file yields all defaults.
    """
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from exc
    return parse_config_text(text, source=str(p))


def save_config(config: TrackerConfig, path) -> None:
    """Write a config as ``key=value`` lines; reloading yields an equal config."""
    config.validate()
    lines = [f"{f.name}={getattr(config, f.name)!r}" for f in fields(config)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
