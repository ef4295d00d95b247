"""File-based figure rendering.

Two views of a run: the identity-trace panel (per-track cosine cost and the
variance statistic against its threshold, with identity events marked) and
the switch timeline (which hypothesis covered each ground-truth identity
over time).  Everything renders headless straight to PNG files.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import mot_io
from .core_types import TrackerConfig

_EVENT_STYLE = {
    "FALSIFY": ("#d62728", "falsify"),
    "RECOVER": ("#2ca02c", "recover"),
    "REASSIGN": ("#ff7f0e", "reassign"),
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata={"Date": None})
    plt.close(fig)
    return path


def _event_lines(ax, events, kinds=("FALSIFY", "RECOVER", "REASSIGN")):
    seen = set()
    for ev in events:
        if ev.kind not in kinds:
            continue
        color, label = _EVENT_STYLE[ev.kind]
        ax.axvline(ev.frame, color=color, linestyle="--", linewidth=1.0,
                   alpha=0.8, label=None if ev.kind in seen else label)
        seen.add(ev.kind)


def render_identity_traces(trace, events, config: TrackerConfig, path) -> Path:
    """Plot per-track cosine cost and variance statistic over time.

    `trace` rows are (frame, track id, cosine cost, tspec), as collected by
    the tracker; `events` may be pipeline events or parsed event rows.
    """
    events = [mot_io.as_parsed(ev) for ev in events]
    fig, (ax_cost, ax_var) = plt.subplots(
        2, 1, figsize=(10, 6), sharex=True, constrained_layout=True
    )
    by_track: dict[int, list[tuple[int, float, float]]] = {}
    for frame, track_id, cost, tspec in trace:
        by_track.setdefault(track_id, []).append((frame, cost, tspec))
    for track_id in sorted(by_track):
        rows = by_track[track_id]
        frames = [r[0] for r in rows]
        ax_cost.plot(frames, [r[1] for r in rows], linewidth=1.2, label=f"track {track_id}")
        ax_var.plot(frames, [r[2] for r in rows], linewidth=1.2, label=f"track {track_id}")
    ax_var.axhline(config.t_theta, color="black", linestyle=":", linewidth=1.0,
                   label="variance threshold")
    _event_lines(ax_var, events)
    ax_cost.set_ylabel("mean cosine cost")
    ax_var.set_ylabel("cost variance")
    ax_var.set_xlabel("frame")
    ax_cost.set_title("identity traces")
    if by_track:
        ax_cost.legend(loc="upper left", fontsize=8)
    ax_var.legend(loc="upper left", fontsize=8)
    if not trace:
        ax_cost.text(0.5, 0.5, "no identity history recorded",
                     ha="center", va="center", transform=ax_cost.transAxes)
    return _save(fig, path)


def render_switch_timeline(mappings, events, path) -> Path:
    """Plot which hypothesis id covered each gt identity per frame."""
    events = [mot_io.as_parsed(ev) for ev in events]
    gt_ids = sorted({gid for m in mappings.values() for gid in m.values()})
    hyp_ids = sorted({hyp for m in mappings.values() for hyp in m})
    colors = plt.get_cmap("tab10")
    color_of = {hyp: colors(i % 10) for i, hyp in enumerate(hyp_ids)}
    fig, ax = plt.subplots(figsize=(10, 1.0 + 0.6 * max(len(gt_ids), 1)),
                           constrained_layout=True)
    lane_of = {gid: i for i, gid in enumerate(gt_ids)}
    labeled = set()
    for gid in gt_ids:
        frames = sorted(f for f, m in mappings.items() if gid in m.values())
        runs: list[tuple[int, int, int]] = []   # (start, end, hyp)
        for frame in frames:
            hyp = next(h for h, g in mappings[frame].items() if g == gid)
            if runs and runs[-1][2] == hyp and runs[-1][1] == frame - 1:
                runs[-1] = (runs[-1][0], frame, hyp)
            else:
                runs.append((frame, frame, hyp))
        for start, end, hyp in runs:
            label = f"hyp {hyp}" if hyp not in labeled else None
            labeled.add(hyp)
            ax.plot([start, end + 0.8], [lane_of[gid]] * 2, linewidth=6,
                    solid_capstyle="butt", color=color_of[hyp], label=label)
    _event_lines(ax, events)
    ax.set_yticks(range(len(gt_ids)), [f"gt {gid}" for gid in gt_ids])
    ax.set_ylim(-0.7, max(len(gt_ids) - 0.3, 0.7))
    ax.set_xlabel("frame")
    ax.set_title("identity coverage per ground-truth target")
    if labeled or events:
        ax.legend(loc="upper right", fontsize=8, ncols=2)
    if not gt_ids:
        ax.text(0.5, 0.5, "no matched frames", ha="center", va="center",
                transform=ax.transAxes)
    return _save(fig, path)
