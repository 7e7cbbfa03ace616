"""Tier-1 candidate generation."""

from .committee import CommitteeClassifier, score, train_committee
from .detector import Candidate, Tier1Config, detect, feature_matrix, generate_candidates, score_candidates
from .features import CandidateFeatures, compute_features, exposed_face_area, sphericity
from .segmentation import (
    Detection3D,
    NoSpineFoundError,
    SpineMask,
    SubSegment2D,
    merge_subsegments,
    segment_spine,
    select_dense_segments,
    stack_detections,
    watershed_subsegments,
)

__all__ = [
    "Candidate",
    "CandidateFeatures",
    "CommitteeClassifier",
    "Detection3D",
    "NoSpineFoundError",
    "SpineMask",
    "SubSegment2D",
    "Tier1Config",
    "compute_features",
    "detect",
    "exposed_face_area",
    "feature_matrix",
    "generate_candidates",
    "merge_subsegments",
    "score",
    "score_candidates",
    "segment_spine",
    "select_dense_segments",
    "sphericity",
    "stack_detections",
    "train_committee",
    "watershed_subsegments",
]
