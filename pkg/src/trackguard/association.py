"""Association costs and matching.

Cost matrices here use one convention everywhere: entries live in [0, 1] and
the exact value 1.0 is the *forbidden* sentinel.  A forbidden pair is never
assigned, and no operation in this module ever turns a forbidden entry back
into an assignable one.

Matching itself is minimum-cost with maximum cardinality over the
non-forbidden entries, with ties broken toward the lexicographically
smallest (row, column) pair list so repeated runs and golden files agree
byte for byte.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core_types import BoundingBox, Detection, Track, TrackerConfig, TrackGuardError
from .motion import state_box, state_vector

FORBIDDEN = 1.0
# Finite stand-in for forbidden entries inside the solver.  A power of two
# keeps arithmetic with small dyadic costs exact.
_BIG = float(2 ** 20)


class AssociationError(TrackGuardError):
    pass


# ---------------------------------------------------------------------------
# elementary costs
# ---------------------------------------------------------------------------

def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes."""
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes_a: list[BoundingBox], boxes_b: list[BoundingBox]) -> np.ndarray:
    """Pairwise IoU, rows over boxes_a."""
    if not boxes_a or not boxes_b:
        return np.zeros((len(boxes_a), len(boxes_b)), dtype=np.float64)
    a = np.array([[b.left, b.top, b.right, b.bottom, b.area] for b in boxes_a])
    b = np.array([[x.left, x.top, x.right, x.bottom, x.area] for x in boxes_b])
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    return inter / (a[:, None, 4] + b[None, :, 4] - inter)


def cosine_distance(f: np.ndarray, g: np.ndarray) -> float:
    """1 - cosine similarity, in [0, 2].  Raises on a zero-norm input."""
    nf = float(np.linalg.norm(f))
    ng = float(np.linalg.norm(g))
    if nf < 1e-12 or ng < 1e-12:
        raise AssociationError("cosine distance undefined for zero-norm vector")
    return 1.0 - float(np.dot(f, g)) / (nf * ng)


def cost_error(state, detection: Detection, image_diag: float) -> float:
    """Normalized distance between a predicted box and a detected box.

    Euclidean norm over the (cx, cy, w, h) difference, divided by the image
    diagonal so the gate threshold is resolution independent.
    """
    if image_diag <= 0.0:
        raise AssociationError(f"image diagonal must be positive, got {image_diag}")
    diff = state_vector(state) - detection.box.vector()
    return float(np.linalg.norm(diff)) / image_diag


# ---------------------------------------------------------------------------
# gating
# ---------------------------------------------------------------------------

def gate_mask(tracks: list[Track], detections: list[Detection],
              epsilon_gate: float, image_diag: float) -> np.ndarray:
    """Boolean matrix, True where a pair passes the motion gate (error < gate)."""
    if not tracks or not detections:
        return np.zeros((len(tracks), len(detections)), dtype=bool)
    pred = np.stack([t.motion.mean[:4] for t in tracks])
    pred[:, 2] = pred[:, 2] * pred[:, 3]  # aspect -> width, the gate convention
    det = np.vstack([d.box.vector() for d in detections])
    err = np.linalg.norm(pred[:, None, :] - det[None, :, :], axis=2) / image_diag
    return err < epsilon_gate


def candidate_sets(tracks: list[Track], detections: list[Detection],
                   epsilon_gate: float, image_diag: float) -> list[set[int]]:
    """Per-track set of detection indices inside the motion gate."""
    mask = gate_mask(tracks, detections, epsilon_gate, image_diag)
    return [set(np.flatnonzero(row)) for row in mask]


# ---------------------------------------------------------------------------
# fusion and ambiguous-match pruning
# ---------------------------------------------------------------------------

def fuse_costs(d_iou: np.ndarray, d_reid: np.ndarray, alpha: float) -> np.ndarray:
    """Convex blend alpha * d_iou + (1 - alpha) * d_reid.

    Forbidden entries in either input stay forbidden in the output.
    """
    d_iou = np.asarray(d_iou, dtype=np.float64)
    d_reid = np.asarray(d_reid, dtype=np.float64)
    if d_iou.shape != d_reid.shape:
        raise AssociationError(
            f"cost matrices must share a shape, got {d_iou.shape} vs {d_reid.shape}"
        )
    if not (0.0 < alpha < 1.0):
        raise AssociationError(f"alpha must be in (0, 1), got {alpha}")
    fused = alpha * d_iou + (1.0 - alpha) * d_reid
    forbidden = (d_iou >= FORBIDDEN) | (d_reid >= FORBIDDEN)
    fused[forbidden] = FORBIDDEN
    return fused


def ami_filter(costs: np.ndarray, d_theta: float, rho: float) -> np.ndarray:
    """Prune ambiguous matches from a cost matrix.

    Step 1: every entry above d_theta becomes forbidden.
    Step 2: within each row and each column, entries at least rho times the
    (non-forbidden) minimum are discarded, all marks decided simultaneously
    on the step-1 matrix and applied at once.  Row and column minima,
    including ties at the minimum, always survive.
    """
    out = np.asarray(costs, dtype=np.float64).copy()
    if out.ndim != 2:
        raise AssociationError(f"cost matrix must be 2-D, got shape {out.shape}")
    if not (0.0 < d_theta < 1.0):
        raise AssociationError(f"d_theta must be in (0, 1), got {d_theta}")
    if not rho > 1.0:
        raise AssociationError(f"rho must be > 1, got {rho}")
    out[out > d_theta] = FORBIDDEN
    usable = out < FORBIDDEN
    if not usable.any():
        return out

    marked = np.zeros_like(usable)
    protected = np.zeros_like(usable)
    masked = np.where(usable, out, np.inf)
    for axis in (1, 0):
        mins = masked.min(axis=axis, keepdims=True)
        has_min = np.isfinite(mins)
        dominated = usable & has_min & (out >= rho * mins) & (out > mins)
        marked |= dominated
        protected |= usable & has_min & (out == mins)
    out[marked & ~protected] = FORBIDDEN
    return out


# ---------------------------------------------------------------------------
# assignment
# ---------------------------------------------------------------------------

@dataclass
class Assignment:
    """Result of one matching: matched pairs plus both leftover index lists."""

    pairs: list[tuple[int, int]]
    unmatched_tracks: list[int]
    unmatched_detections: list[int]


def _exact_value(cost: np.ndarray, pairs) -> tuple[int, Fraction]:
    """(cardinality, exact total) of the real pairs in an assignment."""
    count = 0
    total = Fraction(0)
    for r, c in pairs:
        v = cost[r, c]
        if v < FORBIDDEN:
            count += 1
            total += Fraction(v)
    return count, total


def _solve_masked(cost: np.ndarray, rows: list[int], cols: list[int]) -> list[tuple[int, int]]:
    """scipy assignment on a sub-problem; returns the real (non-forbidden) pairs."""
    if not rows or not cols:
        return []
    sub = cost[np.ix_(rows, cols)]
    masked = np.where(sub < FORBIDDEN, sub, _BIG)
    ri, ci = linear_sum_assignment(masked)
    return [(rows[r], cols[c]) for r, c in zip(ri, ci) if sub[r, c] < FORBIDDEN]


def _value_better_or_equal(a: tuple[int, Fraction], b: tuple[int, Fraction]) -> bool:
    """True when value a (count, total) is at least as good as b."""
    return (-a[0], a[1]) <= (-b[0], b[1])


def solve_assignment(costs: np.ndarray) -> Assignment:
    """Minimum-cost, maximum-cardinality matching over non-forbidden entries.

    Rows and columns whose only options are forbidden stay unmatched.  Among
    equal-cost optima the lexicographically smallest sorted pair list wins:
    each row in turn takes the smallest column that still permits an optimal
    completion, and a row is left unmatched only when no column does.
    Optimality checks run in exact rational arithmetic on the float entries.
    """
    cost = np.asarray(costs, dtype=np.float64)
    if cost.ndim != 2:
        raise AssociationError(f"cost matrix must be 2-D, got shape {cost.shape}")
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0 or not (cost < FORBIDDEN).any():
        return Assignment([], list(range(n_rows)), list(range(n_cols)))

    all_rows = list(range(n_rows))
    all_cols = list(range(n_cols))
    base_pairs = _solve_masked(cost, all_rows, all_cols)
    current = dict(base_pairs)

    # The exact optimum value is only needed once a probe runs; clean frames
    # (every row already holding its smallest admissible column) never pay for
    # the rational arithmetic.
    best_value: tuple[int, Fraction] | None = None

    def optimum() -> tuple[int, Fraction]:
        nonlocal best_value
        if best_value is None:
            best_value = _exact_value(cost, base_pairs)
        return best_value

    fixed: list[tuple[int, int]] = []
    free_rows = list(all_rows)
    free_cols = list(all_cols)

    def completion_value(extra: tuple[int, Fraction]) -> tuple[int, Fraction]:
        total = sum((Fraction(cost[r, c]) for r, c in fixed), Fraction(0))
        return (len(fixed) + extra[0], total + extra[1])

    for row in range(n_rows):
        free_rows.remove(row)
        candidates = [c for c in free_cols if cost[row, c] < FORBIDDEN]
        if not candidates:
            continue
        chosen = current.get(row)
        if chosen is not None and chosen not in free_cols:
            chosen = None  # stale: that column was taken by an earlier fix
        if chosen is None:
            # Re-solve the residual to learn what this row gets in some optimum.
            rem_pairs = _solve_masked(cost, [row] + free_rows, free_cols)
            pair_value = completion_value(_exact_value(cost, rem_pairs))
            if not _value_better_or_equal(pair_value, optimum()):
                # cannot happen for a consistent solver; guard anyway
                raise AssociationError("assignment refinement lost optimality")
            current = dict(rem_pairs)
            chosen = current.get(row)
        probe = [c for c in candidates if chosen is None or c < chosen]
        for col in probe:
            rem_pairs = _solve_masked(
                cost, free_rows, [c for c in free_cols if c != col]
            )
            rem_value = _exact_value(cost, rem_pairs)
            total = completion_value(
                (1 + rem_value[0], Fraction(cost[row, col]) + rem_value[1])
            )
            if total == optimum():
                chosen = col
                current = dict(rem_pairs)
                break
        if chosen is None:
            continue  # unmatched in every optimal completion
        fixed.append((row, chosen))
        free_cols.remove(chosen)
        current.pop(row, None)

    matched_rows = {r for r, _ in fixed}
    matched_cols = {c for _, c in fixed}
    return Assignment(
        pairs=fixed,
        unmatched_tracks=[r for r in all_rows if r not in matched_rows],
        unmatched_detections=[c for c in all_cols if c not in matched_cols],
    )


# ---------------------------------------------------------------------------
# two-stage association
# ---------------------------------------------------------------------------

@dataclass
class TwoStageMatch:
    """Two-stage association result in original track/detection indices."""

    stage1: Assignment
    stage2: Assignment
    high_indices: list[int]
    low_indices: list[int]
    stage2_track_rows: list[int]
    matches: list[tuple[int, int]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_high: list[int] = field(default_factory=list)


def _gallery_distance_matrix(tracks: list[Track], detections: list[Detection]) -> np.ndarray:
    """Min cosine distance between each track's stored features and each detection.

    Pairs where the detection has no embedding, or the track has no stored
    features yet, are forbidden.
    """
    n, m = len(tracks), len(detections)
    out = np.full((n, m), FORBIDDEN, dtype=np.float64)
    cols = [j for j, d in enumerate(detections) if d.embedding is not None]
    rows = [i for i, t in enumerate(tracks) if len(t.feature_queue) > 0]
    if not cols or not rows:
        return out
    det_mat = np.vstack([detections[j].embedding for j in cols])
    det_norms = np.linalg.norm(det_mat, axis=1)
    if (det_norms < 1e-12).any():
        raise AssociationError("cosine distance undefined for zero-norm embedding")
    det_mat = det_mat / det_norms[:, None]
    galleries = [tracks[i].feature_queue.unit_matrix() for i in rows]
    # one stacked product for every gallery, then per-track segment maxima
    sims = np.vstack(galleries) @ det_mat.T
    starts = np.cumsum([0] + [g.shape[0] for g in galleries[:-1]])
    best = np.maximum.reduceat(sims, starts, axis=0)
    out[np.ix_(rows, cols)] = np.clip(1.0 - best, 0.0, 1.0)
    return out


def associate_two_stage(tracks: list[Track], detections: list[Detection],
                        config: TrackerConfig, image_diag: float,
                        use_ami: bool = True) -> TwoStageMatch:
    """Match detections to tracks in two passes.

    Stage 1 takes the high-score detections (score >= tau) against every
    given track, on motion-gated fused costs: IoU blended with the gallery
    appearance distance, optionally pruned by the ambiguous-match filter
    (applied to the appearance matrix before fusion).  Stage 2 takes the
    low-score leftovers against stage-1-unmatched tracks on IoU alone.
    """
    high_idx = [j for j, d in enumerate(detections) if d.score >= config.tau]
    low_idx = [j for j, d in enumerate(detections) if d.score < config.tau]
    high = [detections[j] for j in high_idx]
    low = [detections[j] for j in low_idx]

    track_boxes = [state_box(t.motion) for t in tracks]

    # stage 1: gated, appearance-pruned, fused costs
    gate1 = gate_mask(tracks, high, config.epsilon_gate, image_diag)
    d_iou = 1.0 - iou_matrix(track_boxes, [d.box for d in high])
    d_reid = _gallery_distance_matrix(tracks, high)
    d_iou[~gate1] = FORBIDDEN
    d_reid[~gate1] = FORBIDDEN
    if use_ami and d_reid.size:
        d_reid = ami_filter(d_reid, config.d_theta, config.rho)
    fused = fuse_costs(d_iou, d_reid, config.alpha) if d_iou.size else d_iou
    stage1 = solve_assignment(fused)

    # stage 2: leftover tracks vs low-score detections, IoU only
    s2_rows = list(stage1.unmatched_tracks)
    s2_tracks = [tracks[i] for i in s2_rows]
    gate2 = gate_mask(s2_tracks, low, config.epsilon_gate, image_diag)
    d_iou2 = 1.0 - iou_matrix([track_boxes[i] for i in s2_rows], [d.box for d in low])
    d_iou2[~gate2] = FORBIDDEN
    stage2 = solve_assignment(d_iou2)

    matches = [(ti, high_idx[cj]) for ti, cj in stage1.pairs]
    matches += [(s2_rows[ri], low_idx[cj]) for ri, cj in stage2.pairs]
    matches.sort()
    matched_tracks = {t for t, _ in matches}
    unmatched_tracks = [i for i in range(len(tracks)) if i not in matched_tracks]
    unmatched_high = [high_idx[c] for c in stage1.unmatched_detections]

    return TwoStageMatch(
        stage1=stage1,
        stage2=stage2,
        high_indices=high_idx,
        low_indices=low_idx,
        stage2_track_rows=s2_rows,
        matches=matches,
        unmatched_tracks=unmatched_tracks,
        unmatched_high=unmatched_high,
    )
