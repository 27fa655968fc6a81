"""Illumination-robust Gabor jet extraction, point selection, and matching.

The pipeline: convolve an eye-aligned face with a bank of complex Gabor
kernels, normalize every coefficient by the local brightness and contrast
of its own window (which cancels local affine illumination changes), score
each pixel's class separability over a labeled training set, cluster the
best pixels into a fixed set of feature points, and identify probes by the
summed cosine similarity of magnitude jets at those points.
"""

from .bank import (
    BankParams,
    FilterBank,
    GaborKernel,
    ResponseStack,
    build_bank,
    convolve,
    transform,
)
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    GaborJetError,
    GeometryError,
    IncompatibilityError,
    TooFewCandidatesError,
)
from .image import (
    CANONICAL_LEFT_EYE,
    CANONICAL_RIGHT_EYE,
    CANONICAL_SIZE,
    EyeCoords,
    GrayImage,
    LabeledDataset,
    SummedAreaTables,
    align_crop,
    build_sat,
    load_dataset,
    load_image,
    save_pgm,
    window_stats,
)
from .match import (
    EvalReport,
    Gallery,
    MatchResult,
    PerturbSpec,
    Template,
    build_gallery,
    enroll,
    evaluate,
    face_similarity,
    identify,
    jet_similarity,
    make_synthetic_dataset,
    perturb,
    write_synthetic_dataset,
)
from .normalize import (
    Jet,
    NormalizedStack,
    StatsStack,
    dataset_jets,
    image_jets,
    interior_safe_mask,
    jet_at,
    jets_field,
    local_stats,
    normalize,
)
from .select import (
    CandidateSet,
    ClusterState,
    FeaturePointSet,
    ScatterTraces,
    SelectionConfig,
    SeparabilityMap,
    candidates,
    cluster,
    mean_similarity,
    run_clustering,
    scatter_traces,
    select_feature_points,
    separability_map,
)

__version__ = "0.1.0"

__all__ = [
    "BankParams",
    "CANONICAL_LEFT_EYE",
    "CANONICAL_RIGHT_EYE",
    "CANONICAL_SIZE",
    "CandidateSet",
    "ClusterState",
    "ConfigError",
    "DataError",
    "EvalReport",
    "EyeCoords",
    "FeaturePointSet",
    "FilterBank",
    "FormatError",
    "GaborJetError",
    "GaborKernel",
    "Gallery",
    "GeometryError",
    "GrayImage",
    "IncompatibilityError",
    "Jet",
    "LabeledDataset",
    "MatchResult",
    "NormalizedStack",
    "PerturbSpec",
    "ResponseStack",
    "ScatterTraces",
    "SelectionConfig",
    "SeparabilityMap",
    "StatsStack",
    "SummedAreaTables",
    "Template",
    "TooFewCandidatesError",
    "align_crop",
    "build_bank",
    "build_gallery",
    "build_sat",
    "candidates",
    "cluster",
    "convolve",
    "dataset_jets",
    "enroll",
    "evaluate",
    "face_similarity",
    "identify",
    "image_jets",
    "interior_safe_mask",
    "jet_at",
    "jet_similarity",
    "jets_field",
    "load_dataset",
    "load_image",
    "local_stats",
    "make_synthetic_dataset",
    "mean_similarity",
    "normalize",
    "perturb",
    "run_clustering",
    "save_pgm",
    "scatter_traces",
    "select_feature_points",
    "separability_map",
    "transform",
    "window_stats",
    "write_synthetic_dataset",
]
