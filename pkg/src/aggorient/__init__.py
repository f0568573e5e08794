"""Orientation reconstruction of two shapes in their aggregate.

The pipeline aligns each primary shape to its category reference, decomposes
the aggregate into the two posed primaries, extracts the aggregation center,
and measures each primary's orientation toward that center; a four-fold
symmetric von Mises mixture is then fit and tested on the resulting angles.
"""

from .geometry import (
    DistanceMatrix,
    GridSpec,
    PointSet,
    RigidTransform,
    apply_rigid,
    distance_matrix,
    invert_rigid,
    mds_embed,
    rasterize_union,
    subsample,
)
from .correspondence import (
    Correspondence,
    MatchResult,
    PairCorrespondence,
    estimate_pair_rigid,
    estimate_rigid,
    match_one_to_one,
    match_two_to_one,
    set_distance,
)
from .shapecat import ShapeCategory, aspect_ratio, cluster_shapes, pairwise_shape_distance
from .orientation import (
    AggregationRecord,
    aggregation_center,
    analyze_aggregation,
    normalize_angle,
    orientation_angle,
)
from .dirstats import (
    AngleSample,
    FourFoldVonMises,
    TestReport,
    cdf,
    circular_correlation,
    density,
    initial_guesses,
    ks_test,
    log_likelihood,
    mle_fit,
    sample,
    test_mean,
    test_uniformity,
)
from .simgen import SimParams, SimTruth, evaluate_estimates, simulate_batch, simulate_case

__version__ = "0.1.0"

__all__ = [
    "AggregationRecord",
    "AngleSample",
    "Correspondence",
    "DistanceMatrix",
    "FourFoldVonMises",
    "GridSpec",
    "MatchResult",
    "PairCorrespondence",
    "PointSet",
    "RigidTransform",
    "ShapeCategory",
    "SimParams",
    "SimTruth",
    "TestReport",
    "aggregation_center",
    "analyze_aggregation",
    "apply_rigid",
    "aspect_ratio",
    "cdf",
    "circular_correlation",
    "cluster_shapes",
    "density",
    "distance_matrix",
    "estimate_pair_rigid",
    "estimate_rigid",
    "evaluate_estimates",
    "initial_guesses",
    "invert_rigid",
    "ks_test",
    "log_likelihood",
    "match_one_to_one",
    "match_two_to_one",
    "mds_embed",
    "mle_fit",
    "normalize_angle",
    "orientation_angle",
    "pairwise_shape_distance",
    "rasterize_union",
    "sample",
    "set_distance",
    "simulate_batch",
    "simulate_case",
    "subsample",
    "test_mean",
    "test_uniformity",
]
