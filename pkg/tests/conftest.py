"""Shared builders for the test suite."""
from collections import deque

import numpy as np

from trackguard import (
    BoundingBox,
    Detection,
    FeatureRing,
    Track,
    TrackStatus,
    TrackerConfig,
    kf_init,
)


def unit(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr / np.linalg.norm(arr)


def rand_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    return unit(rng.standard_normal(dim))


def make_box(cx=100.0, cy=100.0, w=20.0, h=40.0) -> BoundingBox:
    return BoundingBox.from_center(cx, cy, w, h)


def make_det(frame=1, cx=100.0, cy=100.0, w=20.0, h=40.0,
             score=0.9, embedding=None) -> Detection:
    return Detection(frame=frame, box=make_box(cx, cy, w, h),
                     score=score, embedding=embedding)


def make_track(track_id=1, box=None, config: TrackerConfig | None = None,
               status=TrackStatus.ACTIVE) -> Track:
    config = config or TrackerConfig()
    box = box or make_box()
    return Track(
        id=track_id,
        motion=kf_init(box),
        feature_queue=FeatureRing(config.feature_cap),
        cost_queue=deque(maxlen=config.costq_cap),
        status=status,
    )
