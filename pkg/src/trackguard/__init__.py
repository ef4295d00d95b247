"""Multi-object tracking with falsifiable track-detection bindings.

Tracking-by-detection engine: Kalman motion, two-stage IoU/appearance
association with ambiguous-match pruning, and identity supervision that
treats each track-detection binding as a hypothesis to falsify - sustained
variance in a track's appearance-cost stream flags an id switch, and a
rectification pass repairs it against the track's trusted history.
"""
from .association import (
    Assignment,
    AssociationError,
    FORBIDDEN,
    ami_filter,
    associate_two_stage,
    cosine_distance,
    cost_error,
    fuse_costs,
    iou,
    iou_matrix,
    solve_assignment,
)
from .core_types import (
    BoundingBox,
    ConfigError,
    Detection,
    FeatureRing,
    MotionState,
    Track,
    TrackerConfig,
    TrackGuardError,
    TrackStatus,
    as_embedding,
    load_config,
    parse_config_text,
    save_config,
)
from .identity import (
    FalsificationEvent,
    InsufficientHistoryError,
    RectificationKind,
    RectificationOutcome,
    idsd_update,
    idsr_rectify,
    mean_cosine_cost,
    push_feature,
    tspec,
)
from .metrics import (
    IdentityReport,
    MetricsError,
    SwitchRecord,
    basic_report,
    count_idsw,
    format_report,
    match_frames,
    recovery_report,
    write_report,
)
from .motion import (
    MotionError,
    kf_init,
    kf_predict,
    kf_predict_batch,
    kf_update,
    kf_update_batch,
    state_box,
    state_vector,
)
from .mot_io import (
    FileFormatError,
    ParsedEvent,
    attach_embeddings,
    parse_detections,
    parse_embeddings,
    parse_events,
    parse_gt,
    parse_results,
    write_detections,
    write_embeddings,
    write_events,
    write_gt,
    write_results,
)
from .pipeline import (
    BirthEvent,
    FrameResult,
    PipelineError,
    RemovalEvent,
    RunSummary,
    Tracker,
    run_sequence,
)
from .simulator import (
    Agent,
    ScenarioError,
    ScenarioScript,
    SimulationOutput,
    emit_dataset,
    identity_vectors,
    load_scenario,
    parse_scenario_text,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "Assignment",
    "AssociationError",
    "BirthEvent",
    "BoundingBox",
    "ConfigError",
    "Detection",
    "FalsificationEvent",
    "FeatureRing",
    "FileFormatError",
    "FrameResult",
    "FORBIDDEN",
    "IdentityReport",
    "InsufficientHistoryError",
    "MetricsError",
    "MotionError",
    "MotionState",
    "ParsedEvent",
    "PipelineError",
    "RectificationKind",
    "RectificationOutcome",
    "RemovalEvent",
    "RunSummary",
    "ScenarioError",
    "ScenarioScript",
    "SimulationOutput",
    "SwitchRecord",
    "Track",
    "TrackGuardError",
    "TrackStatus",
    "Tracker",
    "TrackerConfig",
    "ami_filter",
    "as_embedding",
    "associate_two_stage",
    "attach_embeddings",
    "basic_report",
    "cosine_distance",
    "cost_error",
    "count_idsw",
    "emit_dataset",
    "format_report",
    "fuse_costs",
    "identity_vectors",
    "idsd_update",
    "idsr_rectify",
    "iou",
    "iou_matrix",
    "kf_init",
    "kf_predict",
    "kf_predict_batch",
    "kf_update",
    "kf_update_batch",
    "load_config",
    "load_scenario",
    "match_frames",
    "mean_cosine_cost",
    "parse_config_text",
    "parse_detections",
    "parse_embeddings",
    "parse_events",
    "parse_gt",
    "parse_results",
    "parse_scenario_text",
    "push_feature",
    "recovery_report",
    "run_sequence",
    "save_config",
    "simulate",
    "solve_assignment",
    "state_box",
    "state_vector",
    "tspec",
    "write_detections",
    "write_embeddings",
    "write_events",
    "write_gt",
    "write_report",
    "write_results",
]
