"""Punch-hole labeling: question-conditioned image importance maps from
binary "can you still answer?" responses over hidden grid patches."""

from .aggregate import (
    AgreementReport,
    BoxAnnotation,
    ComparisonMetrics,
    ImportanceMap,
    agreement,
    compare,
    compare_scores,
    majority_vote,
    merge_sessions,
    rasterize_boxes,
)
from .grid import (
    GridLevel,
    GroundTruthMask,
    ImageRef,
    PatchId,
    PixelRect,
    RefinementExhausted,
    children,
    coarsen_mask,
    level_grid,
    partition,
    patch_ids,
    patch_rect,
    rasterize_patches,
    refine,
)
from .session import (
    Answer,
    GroupTesting,
    PatchState,
    Policy,
    ProtocolViolation,
    ReplayError,
    Response,
    Sequential,
    Session,
    SessionFinished,
    SessionStatus,
    Shuffled,
    Stimulus,
    create_session,
    predicted_questions,
    replay,
)
from .simulator import (
    AnnotatorModel,
    ExperimentConfig,
    ExperimentReport,
    analytic_majority_error,
    empirical_majority_error,
    estimate_time,
    oracle_answer,
    run_experiment,
    run_session,
)

__version__ = "0.1.0"
