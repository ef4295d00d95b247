"""Association layer: costs, pruning, and the assignment solver.

The assignment oracle enumerates every partial one-to-one matching in exact
rational arithmetic, so the solver's max-cardinality / min-cost / lexicographic
contract is checked against ground truth rather than against scipy.
"""
import itertools
from fractions import Fraction

import numpy as np
import pytest

from trackguard import (
    FORBIDDEN,
    TrackerConfig,
    ami_filter,
    associate_two_stage,
    cosine_distance,
    cost_error,
    fuse_costs,
    iou,
    iou_matrix,
    solve_assignment,
    kf_init,
)
from trackguard.association import AssociationError, candidate_sets, gate_mask
from trackguard.motion import kf_predict

from conftest import make_box, make_det, make_track, rand_unit, unit


# -- oracles -------------------------------------------------------------------

def pixel_iou(a, b) -> float:
    """Counting oracle for IoU on integer-aligned boxes."""
    cells_a = {(x, y) for x in range(int(a.left), int(a.right))
               for y in range(int(a.top), int(a.bottom))}
    cells_b = {(x, y) for x in range(int(b.left), int(b.right))
               for y in range(int(b.top), int(b.bottom))}
    inter = len(cells_a & cells_b)
    union = len(cells_a | cells_b)
    return inter / union


def matching_oracle(cost: np.ndarray):
    """All optimal partial matchings: ((cardinality, exact total), lex pair lists).

    Enumerates every injective row->column map over non-forbidden entries.
    """
    n_rows, n_cols = cost.shape
    best_key = None
    best_lists: list[list[tuple[int, int]]] = []

    def recurse(row, used, pairs, count, total):
        nonlocal best_key, best_lists
        if row == n_rows:
            key = (-count, total)
            if best_key is None or key < best_key:
                best_key = key
                best_lists = [sorted(pairs)]
            elif key == best_key:
                best_lists.append(sorted(pairs))
            return
        recurse(row + 1, used, pairs, count, total)
        for col in range(n_cols):
            if col not in used and cost[row, col] < FORBIDDEN:
                recurse(row + 1, used | {col}, pairs + [(row, col)],
                        count + 1, total + Fraction(cost[row, col]))

    recurse(0, frozenset(), [], 0, Fraction(0))
    return (-best_key[0], best_key[1]), min(best_lists)


def exact_value(cost, pairs):
    return (len(pairs), sum((Fraction(cost[r, c]) for r, c in pairs), Fraction(0)))


def ami_oracle(costs: np.ndarray, d_theta: float, rho: float) -> np.ndarray:
    """Literal restatement of the pruning rule, element by element."""
    step1 = costs.copy()
    step1[step1 > d_theta] = FORBIDDEN
    marked: set[tuple[int, int]] = set()
    protected: set[tuple[int, int]] = set()
    n_rows, n_cols = step1.shape
    lines = [[(i, j) for j in range(n_cols)] for i in range(n_rows)]
    lines += [[(i, j) for i in range(n_rows)] for j in range(n_cols)]
    for line in lines:
        entries = [(ij, step1[ij]) for ij in line if step1[ij] < FORBIDDEN]
        if not entries:
            continue
        m = min(v for _, v in entries)
        for ij, v in entries:
            if v == m:
                protected.add(ij)
            elif v >= rho * m:
                marked.add(ij)
    out = step1.copy()
    for ij in marked - protected:
        out[ij] = FORBIDDEN
    return out


# -- elementary costs ----------------------------------------------------------

def test_iou_basic_cases():
    a = make_box(cx=10.0, cy=10.0, w=10.0, h=10.0)
    assert iou(a, a) == 1.0
    disjoint = make_box(cx=100.0, cy=100.0, w=10.0, h=10.0)
    assert iou(a, disjoint) == 0.0
    # half-overlapping congruent boxes: inter 50, union 150
    shifted = make_box(cx=15.0, cy=10.0, w=10.0, h=10.0)
    assert iou(a, shifted) == pytest.approx(50.0 / 150.0)


def test_iou_agrees_with_pixel_counting_oracle():
    rng = np.random.default_rng(21)
    for _ in range(200):
        ax, ay, bx, by = rng.integers(0, 30, size=4)
        aw, ah, bw, bh = rng.integers(1, 20, size=4)
        from trackguard import BoundingBox
        a = BoundingBox(float(ax), float(ay), float(aw), float(ah))
        b = BoundingBox(float(bx), float(by), float(bw), float(bh))
        assert iou(a, b) == pytest.approx(pixel_iou(a, b), abs=1e-12)


def test_iou_matrix_matches_scalar():
    rng = np.random.default_rng(22)
    boxes_a = [make_box(cx=rng.uniform(0, 50), cy=rng.uniform(0, 50),
                        w=rng.uniform(1, 20), h=rng.uniform(1, 20)) for _ in range(5)]
    boxes_b = [make_box(cx=rng.uniform(0, 50), cy=rng.uniform(0, 50),
                        w=rng.uniform(1, 20), h=rng.uniform(1, 20)) for _ in range(7)]
    mat = iou_matrix(boxes_a, boxes_b)
    assert mat.shape == (5, 7)
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            assert mat[i, j] == pytest.approx(iou(a, b), abs=1e-12)
    assert iou_matrix([], boxes_b).shape == (0, 7)


def test_cosine_distance_reference_values():
    assert cosine_distance(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == pytest.approx(0.0)
    assert cosine_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(1.0)
    assert cosine_distance(np.array([1.0, 0.0]), np.array([-2.0, 0.0])) == pytest.approx(2.0)
    # scale invariance
    rng = np.random.default_rng(23)
    f, g = rng.standard_normal(8), rng.standard_normal(8)
    assert cosine_distance(3.0 * f, g) == pytest.approx(cosine_distance(f, 0.5 * g))


def test_cosine_distance_rejects_zero_norm():
    with pytest.raises(AssociationError):
        cosine_distance(np.zeros(4), np.ones(4))


def test_cost_error_is_normalized_box_distance():
    track_state = kf_init(make_box(cx=100.0, cy=100.0, w=20.0, h=40.0))
    det = make_det(cx=103.0, cy=96.0, w=20.0, h=40.0)
    expected = 5.0 / 1000.0  # 3-4-5 triangle over diagonal 1000
    assert cost_error(track_state, det, 1000.0) == pytest.approx(expected)
    with pytest.raises(AssociationError):
        cost_error(track_state, det, 0.0)


# -- gating ---------------------------------------------------------------------

def test_gate_mask_thresholds_on_normalized_distance():
    config = TrackerConfig()
    track = make_track(box=make_box(cx=100.0, cy=100.0))
    near = make_det(cx=110.0, cy=100.0)
    far = make_det(cx=900.0, cy=900.0)
    mask = gate_mask([track], [near, far], config.epsilon_gate, image_diag=1000.0)
    assert mask.tolist() == [[True, False]]
    sets = candidate_sets([track], [near, far], config.epsilon_gate, 1000.0)
    assert sets == [{0}]


def test_gated_pairs_never_matched():
    config = TrackerConfig()
    rng = np.random.default_rng(24)
    total_matches = 0
    for _ in range(30):
        tracks = [make_track(track_id=i + 1,
                             box=make_box(cx=rng.uniform(0, 400), cy=rng.uniform(0, 400)))
                  for i in range(4)]
        for t in tracks:
            t.feature_queue.push(1, rand_unit(rng, 4))
            t.motion = kf_predict(t.motion)
        dets = [make_det(cx=rng.uniform(0, 400), cy=rng.uniform(0, 400),
                         score=float(rng.uniform(0.2, 1.0)),
                         embedding=rand_unit(rng, 4))
                for _ in range(5)]
        allowed = candidate_sets(tracks, dets, config.epsilon_gate, 300.0)
        match = associate_two_stage(tracks, dets, config, 300.0)
        total_matches += len(match.matches)
        for ti, dj in match.matches:
            assert dj in allowed[ti]
    assert total_matches > 0


# -- fusion -----------------------------------------------------------------------

def test_fuse_costs_blends_and_propagates_forbidden():
    d_iou = np.array([[0.4, FORBIDDEN], [0.2, 0.6]])
    d_reid = np.array([[0.2, 0.1], [FORBIDDEN, 0.4]])
    fused = fuse_costs(d_iou, d_reid, alpha=0.5)
    assert fused[0, 0] == pytest.approx(0.3)
    assert fused[1, 1] == pytest.approx(0.5)
    assert fused[0, 1] == FORBIDDEN
    assert fused[1, 0] == FORBIDDEN


def test_fuse_costs_is_affine_in_alpha_with_correct_endpoints():
    rng = np.random.default_rng(25)
    d_iou = rng.uniform(0.0, 0.99, size=(4, 5))
    d_reid = rng.uniform(0.0, 0.99, size=(4, 5))
    lo = fuse_costs(d_iou, d_reid, 1e-9)
    hi = fuse_costs(d_iou, d_reid, 1.0 - 1e-9)
    assert np.allclose(lo, d_reid, atol=1e-8)
    assert np.allclose(hi, d_iou, atol=1e-8)
    mid = fuse_costs(d_iou, d_reid, 0.5)
    quarter = fuse_costs(d_iou, d_reid, 0.25)
    # affine: f(0.25) = (f(1e-9->0) + f(0.5)) / 2 up to float error
    assert np.allclose(quarter, (lo + mid) / 2.0, atol=1e-8)
    assert ((mid >= np.minimum(d_iou, d_reid) - 1e-12)
            & (mid <= np.maximum(d_iou, d_reid) + 1e-12)).all()


def test_fuse_costs_rejects_bad_input():
    with pytest.raises(AssociationError):
        fuse_costs(np.zeros((2, 2)), np.zeros((2, 3)), 0.5)
    with pytest.raises(AssociationError):
        fuse_costs(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)
    with pytest.raises(AssociationError):
        fuse_costs(np.zeros((2, 2)), np.zeros((2, 2)), 1.0)


# -- ambiguous-match pruning ------------------------------------------------------

def test_ami_prunes_dominated_column_entry():
    # the column {0.03, 0.18}: 0.18 is six times the column minimum and is
    # not its own row's minimum, so it must be discarded
    costs = np.array([[0.03, 0.05],
                      [0.18, 0.04]])
    out = ami_filter(costs, d_theta=0.2, rho=2.0)
    assert out[1, 0] == FORBIDDEN
    assert out[0, 0] == 0.03
    assert out[0, 1] == 0.05
    assert out[1, 1] == 0.04


def test_ami_thresholds_above_d_theta():
    costs = np.array([[0.25, 0.05]])
    out = ami_filter(costs, d_theta=0.2, rho=2.0)
    assert out[0, 0] == FORBIDDEN
    assert out[0, 1] == 0.05


def test_ami_keeps_unambiguous_matrix():
    costs = np.array([[0.05, 0.5], [0.5, 0.07]])
    out = ami_filter(costs, d_theta=0.2, rho=2.0)
    # the 0.5 entries exceed d_theta and drop; the diagonal stays
    assert out[0, 0] == 0.05
    assert out[1, 1] == 0.07
    diag_only = np.array([[0.05, FORBIDDEN], [FORBIDDEN, 0.07]])
    assert np.array_equal(out, diag_only)
    assert np.array_equal(ami_filter(diag_only, 0.2, 2.0), diag_only)


def test_ami_protects_ties_at_the_minimum():
    # row 0 holds a tied minimum pair plus a dominated 0.09; the second row
    # keeps 0.09 from being its column's minimum
    costs = np.array([[0.04, 0.04, 0.09],
                      [0.50, 0.50, 0.02]])
    out = ami_filter(costs, d_theta=0.2, rho=2.0)
    assert out[0, 0] == 0.04
    assert out[0, 1] == 0.04
    assert out[0, 2] == FORBIDDEN  # >= 2 * 0.04 in its row, >= 2 * 0.02 in its column
    assert out[1, 2] == 0.02


def test_ami_marks_are_simultaneous():
    # 0.1 dominates neither line after its dominator is pruned, but marks are
    # decided on the step-1 matrix, so it still survives only through minima
    costs = np.array([[0.05, 0.1],
                      [0.12, 0.11]])
    out = ami_filter(costs, d_theta=0.2, rho=2.0)
    # row 0: min 0.05; 0.1 >= 0.1 marked.  col 1: min 0.1 protects it.
    assert out[0, 1] == 0.1
    # row 1: min 0.11; 0.12 < 0.22 unmarked.  col 0: 0.12 >= 0.1 marked? no: 0.12 < 2*0.05=0.1 is false, 0.12 >= 0.1 marked
    assert out[1, 0] == FORBIDDEN
    assert out[1, 1] == 0.11


def test_ami_matches_oracle_with_properties():
    rng = np.random.default_rng(26)
    for trial in range(300):
        shape = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        costs = rng.uniform(0.0, 0.3, size=shape)
        if trial % 3 == 0:
            # inject exact ties on a coarse grid
            costs = np.round(costs * 16.0) / 16.0
        d_theta = float(rng.uniform(0.05, 0.5))
        rho = float(rng.uniform(1.2, 3.0))
        out = ami_filter(costs, d_theta, rho)
        assert np.array_equal(out, ami_oracle(costs, d_theta, rho))
        # monotone: entries never decrease
        assert (out >= costs - 1e-15).all()
        # idempotent
        assert np.array_equal(ami_filter(out, d_theta, rho), out)
        # output values come from the sub-threshold originals or 1.0
        kept = out[out < FORBIDDEN]
        original = set(costs[costs <= d_theta].tolist())
        assert all(v in original for v in kept.tolist())
        # row and column minima among sub-threshold entries survive
        step1 = costs.copy()
        step1[step1 > d_theta] = FORBIDDEN
        for axis in (0, 1):
            masked = np.where(step1 < FORBIDDEN, step1, np.inf)
            mins = masked.min(axis=axis)
            for k, m in enumerate(mins):
                if np.isfinite(m):
                    line_out = out[:, k] if axis == 0 else out[k, :]
                    assert m in line_out


def test_ami_rejects_bad_parameters():
    with pytest.raises(AssociationError):
        ami_filter(np.zeros((2, 2)), d_theta=0.0, rho=2.0)
    with pytest.raises(AssociationError):
        ami_filter(np.zeros((2, 2)), d_theta=0.2, rho=1.0)
    with pytest.raises(AssociationError):
        ami_filter(np.zeros(4), d_theta=0.2, rho=2.0)


# -- assignment -------------------------------------------------------------------

def test_assignment_diagonal_optimum():
    result = solve_assignment(np.array([[0.1, 0.9], [0.9, 0.1]]))
    assert result.pairs == [(0, 0), (1, 1)]
    assert result.unmatched_tracks == []
    assert result.unmatched_detections == []


def test_assignment_all_forbidden():
    result = solve_assignment(np.full((3, 2), FORBIDDEN))
    assert result.pairs == []
    assert result.unmatched_tracks == [0, 1, 2]
    assert result.unmatched_detections == [0, 1]


def test_assignment_empty_shapes():
    for shape in ((0, 0), (0, 3), (3, 0)):
        result = solve_assignment(np.zeros(shape))
        assert result.pairs == []
        assert result.unmatched_tracks == list(range(shape[0]))
        assert result.unmatched_detections == list(range(shape[1]))


def test_assignment_prefers_cardinality_over_cost():
    # matching both rows costs 1.2; matching only row 0 would cost 0.1, but
    # cardinality wins
    costs = np.array([[0.1, 0.6], [FORBIDDEN, 0.6]])
    result = solve_assignment(costs)
    assert result.pairs == [(0, 0), (1, 1)]


def test_assignment_breaks_ties_lexicographically():
    costs = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert solve_assignment(costs).pairs == [(0, 0), (1, 1)]
    # fully tied square: the diagonal is the lexicographic minimum
    assert solve_assignment(np.full((3, 3), 0.25)).pairs == [(0, 0), (1, 1), (2, 2)]
    # forbidden diagonal holes: two optima exist and row 0 keeping column 0
    # forces rows 1 and 2 to cross
    costs = np.array([[0.25, 0.25, FORBIDDEN],
                      [0.25, FORBIDDEN, 0.25],
                      [FORBIDDEN, 0.25, 0.25]])
    assert solve_assignment(costs).pairs == [(0, 0), (1, 2), (2, 1)]


def test_assignment_leaves_row_unmatched_only_when_forced():
    # both rows admit only column 0; the cheaper row takes it
    costs = np.array([[0.2], [0.1]])
    result = solve_assignment(costs)
    assert result.pairs == [(1, 0)]
    assert result.unmatched_tracks == [0]
    # at equal cost the lower row index wins
    costs = np.array([[0.2], [0.2]])
    assert solve_assignment(costs).pairs == [(0, 0)]


def test_assignment_matches_oracle_exactly():
    rng = np.random.default_rng(27)
    for trial in range(120):
        n_rows = int(rng.integers(0, 6))
        n_cols = int(rng.integers(0, 6))
        costs = rng.uniform(0.0, 1.0, size=(n_rows, n_cols))
        costs[costs > 0.8] = FORBIDDEN
        if trial % 3 == 0:
            # dyadic grid: heavy exact ties, sums stay exact in binary
            costs = np.round(costs * 8.0) / 8.0
        result = solve_assignment(costs)
        assert result.pairs == sorted(result.pairs)
        got_value = exact_value(costs, result.pairs)
        if costs.size == 0 or not (costs < FORBIDDEN).any():
            assert result.pairs == []
            continue
        oracle_value, oracle_pairs = matching_oracle(costs)
        assert got_value == oracle_value
        assert result.pairs == oracle_pairs
        matched_rows = {r for r, _ in result.pairs}
        matched_cols = {c for _, c in result.pairs}
        assert result.unmatched_tracks == [r for r in range(n_rows) if r not in matched_rows]
        assert result.unmatched_detections == [c for c in range(n_cols) if c not in matched_cols]


def test_assignment_rejects_non_matrix():
    with pytest.raises(AssociationError):
        solve_assignment(np.zeros(3))


# -- two-stage association ---------------------------------------------------------

def _embedded_track(track_id, cx, cy, emb, frame=1):
    track = make_track(track_id=track_id, box=make_box(cx=cx, cy=cy))
    track.feature_queue.push(frame, emb)
    return track


def test_two_stage_all_high_scores_leaves_stage2_empty():
    rng = np.random.default_rng(28)
    emb = rand_unit(rng, 8)
    track = _embedded_track(1, 100.0, 100.0, emb)
    det = make_det(cx=101.0, cy=100.0, score=0.9, embedding=emb)
    match = associate_two_stage([track], [det], TrackerConfig(), 1000.0)
    assert match.matches == [(0, 0)]
    assert match.stage2.pairs == []
    assert match.low_indices == []
    assert match.unmatched_high == []


def test_two_stage_identical_embedding_matches_in_stage_one():
    rng = np.random.default_rng(29)
    emb = rand_unit(rng, 8)
    track = _embedded_track(1, 50.0, 50.0, emb)
    det = make_det(cx=50.0, cy=50.0, score=0.95, embedding=emb)
    match = associate_two_stage([track], [det], TrackerConfig(), 1000.0)
    assert match.stage1.pairs == [(0, 0)]


def test_two_stage_low_score_rescues_leftover_track():
    rng = np.random.default_rng(30)
    emb = rand_unit(rng, 8)
    track = _embedded_track(1, 200.0, 200.0, emb)
    low_det = make_det(cx=201.0, cy=200.0, score=0.3)  # no embedding needed
    match = associate_two_stage([track], [low_det], TrackerConfig(), 1000.0)
    assert match.stage1.pairs == []
    assert match.matches == [(0, 0)]
    assert match.stage2_track_rows == [0]


def test_two_stage_unmatched_high_reported_for_birth():
    rng = np.random.default_rng(31)
    emb = rand_unit(rng, 8)
    track = _embedded_track(1, 100.0, 100.0, emb)
    near = make_det(cx=100.0, cy=100.0, score=0.9, embedding=emb)
    newcomer = make_det(cx=400.0, cy=400.0, score=0.9, embedding=rand_unit(rng, 8))
    match = associate_two_stage([track], [near, newcomer], TrackerConfig(), 1000.0)
    assert match.matches == [(0, 0)]
    assert match.unmatched_high == [1]
    assert match.unmatched_tracks == []


def test_two_stage_ami_overrides_misleading_overlap():
    # the detector boxes land swapped (each detection overlaps the other
    # track's box perfectly), so overlap alone matches the wrong identities;
    # appearance is unambiguous and the pruning step forbids the cross pairs
    import math

    def on_circle(angle):
        vec = np.zeros(8)
        vec[0] = math.cos(angle)
        vec[1] = math.sin(angle)
        return vec

    # angles chosen so the appearance matrix is about
    #   [[0.03, 0.15], [0.17, 0.04]]
    a0 = math.acos(0.97)
    a1 = math.acos(0.96)
    beta = math.acos(0.83) + a0
    t0 = _embedded_track(1, 110.0, 100.0, on_circle(0.0))
    t1 = _embedded_track(2, 100.0, 100.0, on_circle(beta))
    d0 = make_det(cx=100.0, cy=100.0, score=0.9, embedding=on_circle(a0))
    d1 = make_det(cx=110.0, cy=100.0, score=0.9, embedding=on_circle(beta - a1))
    cfg = TrackerConfig(alpha=0.5, d_theta=0.2, rho=2.0)
    without = associate_two_stage([t0, t1], [d0, d1], cfg, 1000.0, use_ami=False)
    assert sorted(without.matches) == [(0, 1), (1, 0)]
    with_ami = associate_two_stage([t0, t1], [d0, d1], cfg, 1000.0, use_ami=True)
    assert sorted(with_ami.matches) == [(0, 0), (1, 1)]


def test_two_stage_track_without_features_is_forbidden_in_reid():
    from trackguard.association import _gallery_distance_matrix
    rng = np.random.default_rng(33)
    shared = rand_unit(rng, 8)
    bare = make_track(track_id=1)
    seeded = _embedded_track(2, 100.0, 100.0, shared)
    det_with = make_det(score=0.9, embedding=shared)
    det_without = make_det(score=0.3)
    mat = _gallery_distance_matrix([bare, seeded], [det_with, det_without])
    assert mat[0, 0] == FORBIDDEN
    assert mat[1, 0] == pytest.approx(0.0, abs=1e-12)
    assert mat[0, 1] == FORBIDDEN
    assert mat[1, 1] == FORBIDDEN


def test_gallery_distance_takes_minimum_over_stored_features():
    from trackguard.association import _gallery_distance_matrix
    rng = np.random.default_rng(34)
    track = make_track(track_id=1)
    vecs = [rand_unit(rng, 8) for _ in range(4)]
    for frame, vec in enumerate(vecs, start=1):
        track.feature_queue.push(frame, vec)
    dets = [make_det(score=0.9, embedding=rand_unit(rng, 8)) for _ in range(3)]
    mat = _gallery_distance_matrix([track], dets)
    for j, det in enumerate(dets):
        expected = min(cosine_distance(v, det.embedding) for v in vecs)
        assert mat[0, j] == pytest.approx(max(0.0, min(1.0, expected)), abs=1e-12)
