"""Shape, size, location and attenuation descriptors of 3D detections."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from ..volume import Volume
from .segmentation import Detection3D

# mean |n_x| + |n_y| + |n_z| over isotropic unit normals; rescales face counts
_FACE_AREA_BIAS = 1.5


@dataclass(frozen=True)
class CandidateFeatures:
    volume_mm3: float
    mean_hu: float
    max_hu: float
    std_hu: float
    sphericity: float
    extent_x_mm: float
    extent_y_mm: float
    extent_z_mm: float
    axis_offset_mm: float
    relative_height: float
    surface_to_volume: float
    slice_span: int

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_array(self) -> np.ndarray:
        return np.asarray(astuple(self), dtype=np.float64)

    def as_dict(self) -> dict:
        return dict(zip(self.names(), astuple(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateFeatures":
        return cls(**{name: d[name] for name in cls.names()})


def exposed_face_area(voxels: np.ndarray, spacing) -> float:
    """Area (mm^2) of voxel faces that border a voxel outside the set."""
    sx, sy, sz = spacing
    lo = voxels.min(axis=0)
    box = np.zeros(tuple(voxels.max(axis=0) - lo + 3), dtype=bool)
    v = voxels - lo + 1
    box[v[:, 0], v[:, 1], v[:, 2]] = True
    face_area = (sy * sz, sx * sz, sx * sy)
    total = 0.0
    for axis in range(3):
        total += np.count_nonzero(np.diff(box, axis=axis)) * face_area[axis]
    return float(total)


def sphericity(volume_mm3: float, area_mm2: float) -> float:
    """Compactness in (0, 1], 1 for a ball."""
    if area_mm2 <= 0:
        raise ValueError("surface area must be positive")
    return min(1.0, math.pi ** (1 / 3) * (6 * volume_mm3) ** (2 / 3) / area_mm2)


def compute_features(
    detection: Detection3D, volume: Volume, spine: np.ndarray | None = None
) -> CandidateFeatures:
    """Describe a detection. Location features are taken relative to ``spine``
    when given, otherwise relative to the volume grid.
    """
    vox = detection.voxels
    if len(vox) == 0:
        raise ValueError("detection mask is empty")
    spacing = np.asarray(volume.spacing)
    hu = volume.data[vox[:, 0], vox[:, 1], vox[:, 2]].astype(np.float64)
    vol_mm3 = len(vox) * volume.voxel_volume
    faces = exposed_face_area(vox, volume.spacing)
    area = faces / _FACE_AREA_BIAS
    extents = (vox.max(axis=0) - vox.min(axis=0) + 1) * spacing
    centroid_idx = vox.mean(axis=0)

    zs = np.unique(vox[:, 2])
    if spine is not None and spine[:, :, zs].any():
        axis_xy = np.argwhere(spine[:, :, zs])[:, :2].mean(axis=0)
        spine_z = np.flatnonzero(spine.any(axis=(0, 1)))
        z_lo, z_hi = spine_z.min(), spine_z.max()
    else:
        axis_xy = (np.asarray(volume.dims[:2]) - 1) / 2.0
        z_lo, z_hi = 0, volume.dims[2] - 1
    offset = float(np.hypot(*((centroid_idx[:2] - axis_xy) * spacing[:2])))
    height = 0.5 if z_hi == z_lo else float((centroid_idx[2] - z_lo) / (z_hi - z_lo))

    return CandidateFeatures(
        volume_mm3=float(vol_mm3),
        mean_hu=float(hu.mean()),
        max_hu=float(hu.max()),
        std_hu=float(hu.std()),
        sphericity=sphericity(vol_mm3, area),
        extent_x_mm=float(extents[0]),
        extent_y_mm=float(extents[1]),
        extent_z_mm=float(extents[2]),
        axis_offset_mm=offset,
        relative_height=min(1.0, max(0.0, height)),
        surface_to_volume=float(area / vol_mm3),
        slice_span=int(zs.size),
    )
