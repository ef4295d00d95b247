"""Deterministic synthetic-scene generator.

Scripts describe agents moving through an image along piecewise-linear
waypoint paths, with scripted visibility windows and an occlusion rule that
fires when two visible boxes overlap.  The generator emits detection files,
embedding sidecars, and ground truth that exercise the tracker's identity
machinery on demand: crossings, occlusion blips, and permanent swaps.

Determinism contract (everything below is part of the format):

* One ``numpy.random.Generator(PCG64(seed))`` is consumed over the whole run.
* Before the frame loop it yields the shared base direction for identity
  vectors (``standard_normal(D)``).
* Per-agent identity components come from fresh ``PCG64(identity_seed)``
  generators (one ``standard_normal(D)`` each, in ascending agent id order),
  orthogonalized against the base and all previously built components, so
  every pair of identities has cosine similarity exactly ``identity_overlap``.
* Within each frame the master generator is consumed in two passes, both in
  ascending agent id order: first one ``uniform()`` per visible agent that
  sits behind another agent in a triggered overlap (the dropout draw), then
  one ``standard_normal(D)`` per surviving agent (the embedding noise draw).

"behind" means the larger agent id.  A surviving agent overlapped above the
IoU trigger by visible partners observes a blended identity,
``(1-beta) * own + beta * mean(partners)``, before noise and normalization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import mot_io
from .association import iou
from .core_types import BoundingBox, Detection, TrackGuardError, as_embedding


class ScenarioError(TrackGuardError):
    pass


@dataclass(frozen=True)
class Agent:
    """One scripted target: geometry, visibility, and an identity seed."""

    agent_id: int
    identity_seed: int
    width: float
    height: float
    waypoints: tuple[tuple[int, float, float], ...]   # (frame, cx, cy)
    visible: tuple[tuple[int, int], ...]              # inclusive intervals

    def position(self, frame: int) -> tuple[float, float]:
        """Piecewise-linear interpolation; clamped outside the waypoint span."""
        pts = self.waypoints
        if frame <= pts[0][0]:
            return pts[0][1], pts[0][2]
        if frame >= pts[-1][0]:
            return pts[-1][1], pts[-1][2]
        for (fa, xa, ya), (fb, xb, yb) in zip(pts, pts[1:]):
            if fa <= frame <= fb:
                t = (frame - fa) / (fb - fa)
                return xa + t * (xb - xa), ya + t * (yb - ya)
        raise AssertionError("unreachable: waypoint frames are ordered")

    def is_visible(self, frame: int) -> bool:
        return any(a <= frame <= b for a, b in self.visible)

    def box(self, frame: int) -> BoundingBox:
        cx, cy = self.position(frame)
        return BoundingBox.from_center(cx, cy, self.width, self.height)


@dataclass
class ScenarioScript:
    image_width: int
    image_height: int
    frames: int
    embedding_dim: int
    seed: int
    agents: list[Agent] = field(default_factory=list)
    noise_sigma: float = 0.0
    identity_overlap: float = 0.0
    iou_trigger: float = 0.3
    blend_beta: float = 0.0
    dropout_prob: float = 0.0
    score: float = 0.95

    def validate(self) -> None:
        def err(msg):
            raise ScenarioError(f"invalid scenario: {msg}")

        if self.image_width <= 0 or self.image_height <= 0:
            err(f"image size must be positive, got {self.image_width}x{self.image_height}")
        if self.frames < 1:
            err(f"frame count must be >= 1, got {self.frames}")
        if self.embedding_dim < 2:
            err(f"embedding dimension must be >= 2, got {self.embedding_dim}")
        if self.seed < 0:
            err(f"seed must be >= 0, got {self.seed}")
        if self.noise_sigma < 0:
            err(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.identity_overlap < 1.0:
            err(f"identity_overlap must be in [0, 1), got {self.identity_overlap}")
        if not 0.0 < self.iou_trigger <= 1.0:
            err(f"iou_trigger must be in (0, 1], got {self.iou_trigger}")
        if not 0.0 <= self.blend_beta <= 1.0:
            err(f"blend_beta must be in [0, 1], got {self.blend_beta}")
        if not 0.0 <= self.dropout_prob <= 1.0:
            err(f"dropout_prob must be in [0, 1], got {self.dropout_prob}")
        if not 0.0 < self.score <= 1.0:
            err(f"score must be in (0, 1], got {self.score}")
        if len(self.agents) + 1 > self.embedding_dim:
            err(
                f"{len(self.agents)} agents need embedding_dim >= "
                f"{len(self.agents) + 1} for separable identities"
            )
        seen_ids: set[int] = set()
        seen_seeds: set[int] = set()
        for agent in self.agents:
            tag = f"agent {agent.agent_id}"
            if agent.agent_id < 1:
                err(f"agent ids must be >= 1, got {agent.agent_id}")
            if agent.agent_id in seen_ids:
                err(f"duplicate agent id {agent.agent_id}")
            seen_ids.add(agent.agent_id)
            if agent.identity_seed in seen_seeds:
                err(f"{tag}: identity_seed {agent.identity_seed} already used")
            seen_seeds.add(agent.identity_seed)
            if agent.width <= 0 or agent.height <= 0:
                err(f"{tag}: box size must be positive")
            if not agent.waypoints:
                err(f"{tag}: needs at least one waypoint")
            frames = [f for f, _, _ in agent.waypoints]
            if any(b <= a for a, b in zip(frames, frames[1:])):
                err(f"{tag}: waypoint frames must be strictly increasing")
            if frames[0] < 1 or frames[-1] > self.frames:
                err(f"{tag}: waypoint frames must lie in [1, {self.frames}]")
            if not all(math.isfinite(v) for _, x, y in agent.waypoints for v in (x, y)):
                err(f"{tag}: waypoint positions must be finite")
            if not agent.visible:
                err(f"{tag}: needs at least one visibility interval")
            last_end = 0
            for a, b in agent.visible:
                if a < 1 or b > self.frames or a > b:
                    err(f"{tag}: bad visibility interval {a}-{b}")
                if a <= last_end:
                    err(f"{tag}: visibility intervals must be ordered and disjoint")
                last_end = b


# -- script files -------------------------------------------------------------

_GLOBAL_INT = {"image_width", "image_height", "frames", "embedding_dim", "seed"}
_GLOBAL_FLOAT = {
    "noise_sigma", "identity_overlap", "iou_trigger",
    "blend_beta", "dropout_prob", "score",
}
_AGENT_FIELDS = {"identity_seed", "width", "height", "waypoints", "visible"}


def _parse_waypoints(value: str, where: str) -> tuple[tuple[int, float, float], ...]:
    points = []
    for token in value.split(";"):
        parts = token.split(":")
        if len(parts) != 3:
            raise ScenarioError(f"{where}: waypoint must be frame:x:y, got {token!r}")
        try:
            points.append((int(parts[0]), float(parts[1]), float(parts[2])))
        except ValueError:
            raise ScenarioError(f"{where}: bad waypoint numbers in {token!r}") from None
    return tuple(points)


def _parse_intervals(value: str, where: str) -> tuple[tuple[int, int], ...]:
    intervals = []
    for token in value.split(";"):
        a, sep, b = token.partition("-")
        try:
            start = int(a)
            end = int(b) if sep else start
        except ValueError:
            raise ScenarioError(f"{where}: bad interval {token!r}") from None
        intervals.append((start, end))
    return tuple(intervals)


def parse_scenario_text(text: str, source: str = "<scenario>") -> ScenarioScript:
    """Parse the key=value scenario dialect (agent fields use agent.<id>.<name>)."""
    globals_: dict = {}
    agents_raw: dict[int, dict[str, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ScenarioError(f"{where}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key.startswith("agent."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in _AGENT_FIELDS:
                raise ScenarioError(f"{where}: unknown agent key {key!r}")
            try:
                agent_id = int(parts[1])
            except ValueError:
                raise ScenarioError(f"{where}: bad agent id in {key!r}") from None
            fields_ = agents_raw.setdefault(agent_id, {})
            if parts[2] in fields_:
                raise ScenarioError(f"{where}: duplicate key {key!r}")
            fields_[parts[2]] = (where, value)
        elif key in _GLOBAL_INT or key in _GLOBAL_FLOAT:
            if key in globals_:
                raise ScenarioError(f"{where}: duplicate key {key!r}")
            try:
                globals_[key] = int(value) if key in _GLOBAL_INT else float(value)
            except ValueError:
                kind = "an integer" if key in _GLOBAL_INT else "a number"
                raise ScenarioError(f"{where}: {key} must be {kind}, got {value!r}") from None
        else:
            raise ScenarioError(f"{where}: unknown scenario key {key!r}")

    missing = sorted(_GLOBAL_INT - globals_.keys())
    if missing:
        raise ScenarioError(f"{source}: missing required keys: {', '.join(missing)}")

    agents = []
    for agent_id in sorted(agents_raw):
        fields_ = agents_raw[agent_id]
        missing = sorted(_AGENT_FIELDS - fields_.keys())
        if missing:
            raise ScenarioError(
                f"{source}: agent {agent_id} missing fields: {', '.join(missing)}"
            )

        def value_of(name, parse, agent_fields=fields_):
            where, text_value = agent_fields[name]
            try:
                return parse(text_value)
            except ScenarioError:
                raise
            except ValueError:
                raise ScenarioError(f"{where}: bad value {text_value!r} for {name}") from None

        agents.append(Agent(
            agent_id=agent_id,
            identity_seed=value_of("identity_seed", int),
            width=value_of("width", float),
            height=value_of("height", float),
            waypoints=_parse_waypoints(fields_["waypoints"][1], fields_["waypoints"][0]),
            visible=_parse_intervals(fields_["visible"][1], fields_["visible"][0]),
        ))

    script = ScenarioScript(agents=agents, **globals_)
    script.validate()
    return script


def load_scenario(path) -> ScenarioScript:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {p}: {exc}") from exc
    return parse_scenario_text(text, source=str(p))


# -- generation ----------------------------------------------------------------

def identity_vectors(script: ScenarioScript, rng: np.random.Generator) -> dict[int, np.ndarray]:
    """Build one unit identity vector per agent.

    All vectors share a base component weighted by identity_overlap; the
    remainders are mutually orthogonal, so every pair's cosine similarity is
    exactly identity_overlap.  Consumes one draw from `rng` for the base.
    """
    dim = script.embedding_dim
    base = as_embedding(rng.standard_normal(dim))
    basis = [base]
    s = script.identity_overlap
    vectors: dict[int, np.ndarray] = {}
    for agent in sorted(script.agents, key=lambda a: a.agent_id):
        raw = np.random.Generator(np.random.PCG64(agent.identity_seed)).standard_normal(dim)
        for b in basis:
            raw = raw - (raw @ b) * b
        norm = float(np.linalg.norm(raw))
        if norm < 1e-9:
            raise ScenarioError(
                f"agent {agent.agent_id}: identity_seed {agent.identity_seed} "
                f"gives a degenerate identity direction"
            )
        u = raw / norm
        basis.append(u)
        vectors[agent.agent_id] = math.sqrt(s) * base + math.sqrt(1.0 - s) * u
    return vectors


@dataclass
class SimulationOutput:
    """In-memory dataset: detections (with embeddings), sidecar rows, ground truth."""

    detections: dict[int, list[Detection]]
    embeddings: list[np.ndarray]
    gt: dict[int, list[tuple[int, BoundingBox]]]


def simulate(script: ScenarioScript, seed: int | None = None) -> SimulationOutput:
    """Run the script and return the generated dataset.

    `seed` overrides the script's seed (same scenario, fresh noise).
    """
    if seed is not None:
        script = replace(script, seed=seed)
    script.validate()
    rng = np.random.Generator(np.random.PCG64(script.seed))
    identities = identity_vectors(script, rng)
    agents = sorted(script.agents, key=lambda a: a.agent_id)

    detections: dict[int, list[Detection]] = {}
    embeddings: list[np.ndarray] = []
    gt: dict[int, list[tuple[int, BoundingBox]]] = {}
    for frame in range(1, script.frames + 1):
        visible = [a for a in agents if a.is_visible(frame)]
        boxes = {a.agent_id: a.box(frame) for a in visible}
        partners: dict[int, list[int]] = {a.agent_id: [] for a in visible}
        behind: set[int] = set()
        for i, a in enumerate(visible):
            for b in visible[i + 1:]:
                if iou(boxes[a.agent_id], boxes[b.agent_id]) > script.iou_trigger:
                    partners[a.agent_id].append(b.agent_id)
                    partners[b.agent_id].append(a.agent_id)
                    behind.add(max(a.agent_id, b.agent_id))

        surviving = []
        for agent in visible:   # dropout pass: one uniform per occluded agent
            if agent.agent_id in behind:
                if rng.uniform() < script.dropout_prob:
                    continue
            surviving.append(agent)

        frame_dets: list[Detection] = []
        frame_gt: list[tuple[int, BoundingBox]] = []
        for agent in surviving:  # noise pass: one normal draw per emitted row
            mixed = identities[agent.agent_id]
            mates = partners[agent.agent_id]
            if mates and script.blend_beta > 0.0:
                other = np.mean([identities[m] for m in mates], axis=0)
                mixed = (1.0 - script.blend_beta) * mixed + script.blend_beta * other
            noise = rng.standard_normal(script.embedding_dim)
            observed = as_embedding(mixed + script.noise_sigma * noise)
            box = boxes[agent.agent_id]
            frame_dets.append(Detection(
                frame=frame, box=box, score=script.score, embedding=observed,
            ))
            embeddings.append(observed)
            frame_gt.append((agent.agent_id, box))
        if frame_dets:
            detections[frame] = frame_dets
            gt[frame] = frame_gt
    return SimulationOutput(detections=detections, embeddings=embeddings, gt=gt)


def emit_dataset(script: ScenarioScript, out_dir, seed: int | None = None) -> dict[str, Path]:
    """Write detections.txt, embeddings.txt, and gt.txt; byte-deterministic per seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = simulate(script, seed=seed)
    paths = {
        "detections": out / "detections.txt",
        "embeddings": out / "embeddings.txt",
        "gt": out / "gt.txt",
    }
    mot_io.write_detections(data.detections, paths["detections"])
    mot_io.write_embeddings(data.embeddings, paths["embeddings"], dim=script.embedding_dim)
    mot_io.write_gt(data.gt, paths["gt"])
    return paths
