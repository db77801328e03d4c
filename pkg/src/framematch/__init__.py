"""framematch: sub-quadratic matching of smooth frame sequences, strong-match
clustering, and voting-based background subtraction, with every claimed bound
certifiable against brute-force oracles and Monte-Carlo simulation."""

from .matching import (
    ANCHOR,
    PROPAGATED,
    TRACKED_GAP,
    EvalCounter,
    MatchAssignment,
    MatchCost,
    PipelineResult,
    bound_audit,
    full_pipeline_match,
    local_search_match,
    matching_cost,
    naive_match,
    near_linear_match,
    stride_indices,
)
from .sequence_model import (
    AssumptionParams,
    DistanceMetricSpec,
    FrameDescriptor,
    FrameSequence,
    StrongMatchSet,
    audit_completeness,
    audit_smoothness,
    distance,
    euclidean_metric,
    measure_assumptions,
    precomputed_metric,
    strong_matches_bruteforce,
)
from .simulator import (
    PathSpec,
    RenderSpec,
    SimInstance,
    generate_background_path,
    generate_foreground_path,
    generate_uniform_model,
    make_instance,
    make_trial_set,
    render_truth_masks,
    uniform_model_report,
)
from .subtraction_voting import (
    FusedMask,
    NoiseModel,
    VoteParams,
    chernoff_bound,
    extract_foreground,
    simulate_vote_error,
    subtract,
    vote_fuse,
)
from .tracking import GapSegment, apply_tracking, detect_gaps, fuse_passes, propagate

__version__ = "0.1.0"
