"""Full tier-1 chain from a volume to scored lesion candidates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..volume import Volume, flatten_mask, rle_decode, rle_encode
from .committee import CommitteeClassifier
from .features import CandidateFeatures, compute_features
from .segmentation import (
    merge_subsegments,
    segment_spine,
    select_dense_segments,
    stack_detections,
    watershed_subsegments,
)

LABELS = ("true-lesion", "false-positive", "unknown")


@dataclass(frozen=True)
class Tier1Config:
    hu_threshold: float = 200.0
    growing_tolerance: float = 100.0
    min_component_voxels: int = 200
    smoothing_sigma: float = 1.0
    merge_hu: float = 40.0
    contrast_hu: float = 40.0
    core_hu: float = 100.0
    min_overlap_px: int = 1
    committee_members: int = 5
    committee_alpha: float = 1e-3
    committee_epochs: int = 30
    operating_threshold: float | None = None  # None keeps every detection

    @classmethod
    def from_dict(cls, d: dict) -> "Tier1Config":
        return cls(**d)


@dataclass(frozen=True)
class Candidate:
    id: str
    centroid: tuple[float, float, float]
    voxel_indices: np.ndarray = field(repr=False, compare=False)
    features: CandidateFeatures
    tier1_score: float = float("nan")
    label: str = "unknown"
    lesion_index: int = -1

    @property
    def is_true(self) -> bool:
        return self.label == "true-lesion"

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "centroid": list(self.centroid),
            "tier1_score": self.tier1_score,
            "label": self.label,
            "lesion_index": self.lesion_index,
            "features": self.features.as_dict(),
            "mask_rle": rle_encode(self.voxel_indices),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Candidate":
        return cls(
            id=d["id"],
            centroid=tuple(d["centroid"]),
            voxel_indices=rle_decode(d["mask_rle"]),
            features=CandidateFeatures.from_dict(d["features"]),
            tier1_score=float(d["tier1_score"]),
            label=d["label"],
            lesion_index=int(d.get("lesion_index", -1)),
        )


def detect(volume: Volume, config: Tier1Config = Tier1Config(), prefix: str = "c") -> list[Candidate]:
    """Unscored detections: segment, watershed, merge, select, stack, describe."""
    mask = segment_spine(
        volume, config.hu_threshold, config.growing_tolerance, config.min_component_voxels
    )
    per_slice = {}
    for z in range(volume.dims[2]):
        m = mask.spine[:, :, z]
        if not m.any():
            continue
        hu = volume.data[:, :, z].astype(np.float64)
        segs = watershed_subsegments(hu, m, z, config.smoothing_sigma, volume.spacing, volume.origin)
        segs = merge_subsegments(segs, config.merge_hu, hu, volume.spacing, volume.origin)
        dense = select_dense_segments(
            segs, config.contrast_hu, hu, volume.spacing, volume.origin, config.core_hu
        )
        if dense:
            per_slice[z] = dense
    detections = stack_detections(per_slice, config.min_overlap_px, volume.spacing, volume.origin)
    out = []
    for k, det in enumerate(detections):
        dmask = np.zeros(volume.dims, dtype=bool)
        dmask[det.voxels[:, 0], det.voxels[:, 1], det.voxels[:, 2]] = True
        out.append(
            Candidate(
                id=f"{prefix}{k:03d}",
                centroid=det.centroid,
                voxel_indices=flatten_mask(dmask),
                features=compute_features(det, volume, mask.spine),
            )
        )
    return out


def feature_matrix(candidates: list[Candidate]) -> np.ndarray:
    if not candidates:
        return np.zeros((0, len(CandidateFeatures.names())))
    return np.stack([c.features.as_array() for c in candidates])


def score_candidates(
    candidates: list[Candidate], committee: CommitteeClassifier, threshold: float = -math.inf
) -> list[Candidate]:
    """Attach committee scores, drop those at or below ``threshold``, sort descending."""
    if not candidates:
        return []
    scores = committee.decision_function(feature_matrix(candidates))
    scored = [replace(c, tier1_score=float(s)) for c, s in zip(candidates, scores)]
    kept = [c for c in scored if c.tier1_score > threshold]
    return sorted(kept, key=lambda c: (-c.tier1_score, c.id))


def generate_candidates(
    volume: Volume,
    committee: CommitteeClassifier,
    config: Tier1Config = Tier1Config(),
    threshold: float | None = None,
    prefix: str = "c",
) -> list[Candidate]:
    """Tier-1 candidates above the operating threshold, best first."""
    thr = config.operating_threshold if threshold is None else threshold
    if thr is None:
        thr = -math.inf
    return score_candidates(detect(volume, config, prefix), committee, thr)


def config_dict(config: Tier1Config) -> dict:
    return asdict(config)
