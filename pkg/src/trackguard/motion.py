"""Constant-velocity Kalman filter over (cx, cy, aspect, height).

State is 8-dimensional: the four box terms plus their velocities.  Process
and measurement noise scale with box height so large targets tolerate larger
pixel errors.  All functions are pure: they return new MotionState values
and never mutate their inputs.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .core_types import BoundingBox, MotionState, TrackGuardError

# Noise scales relative to box height, one part position, one part velocity.
STD_WEIGHT_POSITION = 1.0 / 20.0
STD_WEIGHT_VELOCITY = 1.0 / 160.0

_NDIM = 4

# Transition matrix: position += velocity each frame (dt = 1).
_F = np.eye(2 * _NDIM)
for _i in range(_NDIM):
    _F[_i, _NDIM + _i] = 1.0
# The measurement model observes the four position terms, so projections by
# the measurement matrix reduce to slicing the first four rows/columns.
_DIAG8 = np.arange(2 * _NDIM)
_DIAG4 = np.arange(_NDIM)


class MotionError(TrackGuardError):
    """Numerical failure inside the filter (degenerate innovation covariance)."""


def _measurement(box: BoundingBox) -> np.ndarray:
    return np.array([box.cx, box.cy, box.aspect, box.height], dtype=np.float64)


def kf_init(box: BoundingBox) -> MotionState:
    """Create a motion state from a first observation, velocities zero.

    Velocity uncertainty starts high so a couple of updates pin it down.
    """
    mean = np.zeros(8, dtype=np.float64)
    mean[:4] = _measurement(box)
    h = box.height
    std = np.array([
        2.0 * STD_WEIGHT_POSITION * h,
        2.0 * STD_WEIGHT_POSITION * h,
        1e-2,
        2.0 * STD_WEIGHT_POSITION * h,
        10.0 * STD_WEIGHT_VELOCITY * h,
        10.0 * STD_WEIGHT_VELOCITY * h,
        1e-5,
        10.0 * STD_WEIGHT_VELOCITY * h,
    ])
    return MotionState(mean=mean, covariance=np.diag(std * std))


def kf_predict(state: MotionState) -> MotionState:
    """Advance one frame.  Covariance grows by the process noise."""
    h = state.mean[3]
    std = np.array([
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_POSITION * h,
        1e-2,
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_VELOCITY * h,
        STD_WEIGHT_VELOCITY * h,
        1e-5,
        STD_WEIGHT_VELOCITY * h,
    ])
    mean = _F @ state.mean
    cov = _F @ state.covariance @ _F.T
    cov[_DIAG8, _DIAG8] += std * std
    return MotionState(mean=mean, covariance=cov)


def kf_predict_batch(states: list[MotionState]) -> list[MotionState]:
    """Advance several states one frame with stacked arithmetic.

    Equivalent to mapping kf_predict, up to floating-point summation order.
    """
    if not states:
        return []
    means = np.stack([s.mean for s in states])
    covs = np.stack([s.covariance for s in states])
    h = means[:, 3]
    pos_var = (STD_WEIGHT_POSITION * h) ** 2
    vel_var = (STD_WEIGHT_VELOCITY * h) ** 2
    var = np.empty((len(states), 2 * _NDIM), dtype=np.float64)
    var[:, 0] = var[:, 1] = var[:, 3] = pos_var
    var[:, 4] = var[:, 5] = var[:, 7] = vel_var
    var[:, 2] = 1e-2 * 1e-2
    var[:, 6] = 1e-5 * 1e-5
    new_means = means @ _F.T
    new_covs = _F @ covs @ _F.T
    new_covs[:, _DIAG8, _DIAG8] += var
    return [
        MotionState(mean=new_means[i].copy(), covariance=new_covs[i].copy())
        for i in range(len(states))
    ]


def kf_update_batch(states: list[MotionState], boxes: list[BoundingBox]) -> list[MotionState]:
    """Fold one measurement into each state with stacked arithmetic.

    Equivalent to mapping kf_update, up to floating-point summation order.
    Raises MotionError when any innovation covariance in the batch fails the
    positive-definiteness check; callers wanting per-state recovery should
    fall back to the scalar form.
    """
    if len(states) != len(boxes):
        raise MotionError(f"got {len(states)} states but {len(boxes)} boxes")
    if not states:
        return []
    n = len(states)
    means = np.stack([s.mean for s in states])
    covs = np.stack([s.covariance for s in states])
    z = np.array([[b.cx, b.cy, b.aspect, b.height] for b in boxes], dtype=np.float64)
    h = means[:, 3]
    pos_var = (STD_WEIGHT_POSITION * h) ** 2
    var = np.empty((n, _NDIM), dtype=np.float64)
    var[:, 0] = var[:, 1] = var[:, 3] = pos_var
    var[:, 2] = 1e-1 * 1e-1
    projected_cov = covs[:, :4, :4].copy()
    projected_cov[:, _DIAG4, _DIAG4] += var
    try:
        np.linalg.cholesky(projected_cov)  # positive-definiteness gate
        kalman_gain = np.linalg.solve(
            projected_cov, covs[:, :, :4].transpose(0, 2, 1)
        ).transpose(0, 2, 1)
    except np.linalg.LinAlgError as exc:
        raise MotionError(f"innovation covariance is not positive definite: {exc}") from exc

    innovation = z - means[:, :4]
    new_means = means + (kalman_gain @ innovation[:, :, None])[:, :, 0]
    gain_cov = kalman_gain @ projected_cov
    new_covs = covs - gain_cov @ kalman_gain.transpose(0, 2, 1)
    new_covs = (new_covs + new_covs.transpose(0, 2, 1)) / 2.0
    return [
        MotionState(mean=new_means[i].copy(), covariance=new_covs[i].copy())
        for i in range(n)
    ]


def kf_update(state: MotionState, box: BoundingBox) -> MotionState:
    """Fold one measured box into the state.

    Raises MotionError when the innovation covariance cannot be factorized;
    the caller is expected to reinitialize motion from the box.
    """
    h = state.mean[3]
    std = np.array([
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_POSITION * h,
        1e-1,
        STD_WEIGHT_POSITION * h,
    ])

    projected_mean = state.mean[:4]
    projected_cov = state.covariance[:4, :4].copy()
    projected_cov[_DIAG4, _DIAG4] += std * std
    try:
        chol, lower = scipy.linalg.cho_factor(projected_cov, lower=True, check_finite=False)
        kalman_gain = scipy.linalg.cho_solve(
            (chol, lower), state.covariance[:, :4].T, check_finite=False
        ).T
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise MotionError(f"innovation covariance is not positive definite: {exc}") from exc

    innovation = _measurement(box) - projected_mean
    mean = state.mean + kalman_gain @ innovation
    cov = state.covariance - kalman_gain @ projected_cov @ kalman_gain.T
    cov = (cov + cov.T) / 2.0  # keep symmetric against accumulation error
    return MotionState(mean=mean, covariance=cov)


def state_box(state: MotionState) -> BoundingBox:
    """Current (cx, cy, aspect, h) state rendered back to a box.

    Extents are floored at a tiny positive value so a numerically squeezed
    state still yields a valid box.
    """
    cx, cy, aspect, height = state.mean[:4]
    height = max(float(height), 1e-3)
    width = max(float(aspect * height), 1e-3)
    return BoundingBox.from_center(float(cx), float(cy), width, height)


def state_vector(state: MotionState) -> np.ndarray:
    """Predicted box as (cx, cy, w, h), the gate's coordinate convention."""
    cx, cy, aspect, height = state.mean[:4]
    return np.array([cx, cy, aspect * height, height], dtype=np.float64)
