"""Kalman filter: convergence, purity, batch/scalar agreement, conventions."""
import numpy as np
import pytest

from trackguard import (
    BoundingBox,
    MotionError,
    MotionState,
    kf_init,
    kf_predict,
    kf_predict_batch,
    kf_update,
    kf_update_batch,
    state_box,
    state_vector,
)

from conftest import make_box


def test_init_centers_state_on_box():
    box = make_box(cx=50.0, cy=60.0, w=20.0, h=40.0)
    state = kf_init(box)
    assert np.allclose(state.mean[:4], [50.0, 60.0, 0.5, 40.0])
    assert np.allclose(state.mean[4:], 0.0)
    # diagonal prior, positive variances
    assert np.allclose(state.covariance, np.diag(np.diag(state.covariance)))
    assert (np.diag(state.covariance) > 0).all()


def test_predict_moves_with_velocity_and_grows_uncertainty():
    state = kf_init(make_box(cx=100.0, cy=100.0))
    state.mean[4] = 3.0  # vx
    state.mean[5] = -2.0  # vy
    pred = kf_predict(state)
    assert pred.mean[0] == pytest.approx(103.0)
    assert pred.mean[1] == pytest.approx(98.0)
    assert np.trace(pred.covariance) > np.trace(state.covariance)


def test_update_pulls_mean_toward_measurement_and_shrinks_variance():
    state = kf_init(make_box(cx=100.0, cy=100.0))
    pred = kf_predict(state)
    measured = make_box(cx=110.0, cy=100.0)
    updated = kf_update(pred, measured)
    assert 100.0 < updated.mean[0] <= 110.0
    assert np.trace(updated.covariance) < np.trace(pred.covariance)


def test_filter_converges_on_constant_velocity_target():
    # oracle: ground-truth center moves 4 px/frame; after a burn-in the
    # one-step-ahead prediction must sit within a pixel of the true center
    state = kf_init(make_box(cx=0.0, cy=0.0))
    errors = []
    for frame in range(1, 41):
        state = kf_predict(state)
        true_cx = 4.0 * frame
        errors.append(abs(state.mean[0] - true_cx))
        state = kf_update(state, make_box(cx=true_cx, cy=0.0))
    assert max(errors[-10:]) < 1.0
    assert errors[-1] < errors[2]


def test_update_is_exact_fixpoint_for_stationary_target():
    state = kf_init(make_box(cx=77.0, cy=33.0))
    for _ in range(50):
        state = kf_update(kf_predict(state), make_box(cx=77.0, cy=33.0))
    assert state.mean[0] == pytest.approx(77.0, abs=1e-9)
    assert state.mean[1] == pytest.approx(33.0, abs=1e-9)
    assert abs(state.mean[4]) < 1e-9


def test_predict_and_update_do_not_mutate_inputs():
    state = kf_init(make_box())
    mean_before = state.mean.copy()
    cov_before = state.covariance.copy()
    kf_predict(state)
    kf_update(state, make_box(cx=105.0))
    assert np.array_equal(state.mean, mean_before)
    assert np.array_equal(state.covariance, cov_before)


def test_update_raises_on_degenerate_covariance():
    state = kf_init(make_box())
    bad = MotionState(mean=state.mean.copy(), covariance=state.covariance.copy())
    bad.covariance[:] = 0.0
    bad.covariance[0, 0] = -1e6  # drives the innovation covariance indefinite
    with pytest.raises(MotionError):
        kf_update(bad, make_box())


# -- batch forms --------------------------------------------------------------

def test_batch_predict_matches_scalar():
    rng = np.random.default_rng(3)
    states = []
    for _ in range(17):
        st = kf_init(make_box(cx=rng.uniform(0, 500), cy=rng.uniform(0, 500),
                              w=rng.uniform(5, 50), h=rng.uniform(5, 50)))
        st.mean[4:] = rng.normal(0, 2, size=4)
        for _ in range(int(rng.integers(0, 4))):
            st = kf_update(kf_predict(st), make_box(cx=rng.uniform(0, 500)))
        states.append(st)
    batch = kf_predict_batch(states)
    for st, got in zip(states, batch):
        want = kf_predict(st)
        assert np.allclose(got.mean, want.mean, rtol=0, atol=1e-9)
        assert np.allclose(got.covariance, want.covariance, rtol=0, atol=1e-9)


def test_batch_update_matches_scalar():
    rng = np.random.default_rng(4)
    states, boxes = [], []
    for _ in range(17):
        st = kf_init(make_box(cx=rng.uniform(0, 500), cy=rng.uniform(0, 500)))
        st = kf_predict(st)
        states.append(st)
        boxes.append(make_box(cx=rng.uniform(0, 500), cy=rng.uniform(0, 500)))
    batch = kf_update_batch(states, boxes)
    for st, box, got in zip(states, boxes, batch):
        want = kf_update(st, box)
        assert np.allclose(got.mean, want.mean, rtol=0, atol=1e-9)
        assert np.allclose(got.covariance, want.covariance, rtol=0, atol=1e-9)


def test_batch_forms_handle_empty_and_mismatch():
    assert kf_predict_batch([]) == []
    assert kf_update_batch([], []) == []
    with pytest.raises(MotionError):
        kf_update_batch([kf_init(make_box())], [])


def test_batch_update_flags_degenerate_member():
    good = kf_predict(kf_init(make_box()))
    bad = MotionState(mean=good.mean.copy(), covariance=good.covariance.copy())
    bad.covariance[:] = 0.0
    bad.covariance[0, 0] = -1e6
    with pytest.raises(MotionError):
        kf_update_batch([good, bad], [make_box(), make_box()])


# -- conventions --------------------------------------------------------------

def test_state_box_round_trips_through_init():
    box = make_box(cx=40.0, cy=30.0, w=16.0, h=32.0)
    got = state_box(kf_init(box))
    assert got.left == pytest.approx(box.left)
    assert got.top == pytest.approx(box.top)
    assert got.width == pytest.approx(box.width)
    assert got.height == pytest.approx(box.height)


def test_state_box_floors_squeezed_extent():
    state = kf_init(make_box())
    state.mean[3] = -5.0  # collapsed height
    got = state_box(state)
    assert got.width > 0 and got.height > 0


def test_state_vector_reports_center_width_height():
    state = kf_init(make_box(cx=40.0, cy=30.0, w=16.0, h=32.0))
    assert np.allclose(state_vector(state), [40.0, 30.0, 16.0, 32.0])
