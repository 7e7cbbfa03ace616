"""Random 2D axial views of candidate ROIs: scale x translation x rotation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volume import Volume, window_normalize


class ViewOutOfBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class ViewSampleConfig:
    scales_mm: tuple[float, ...] = (30.0, 35.0, 40.0, 45.0)
    n_translations: int = 5
    n_rotations: int = 5
    max_translation_mm: float = 3.0
    patch_px: int = 32
    channels: int = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scales_mm", tuple(float(s) for s in self.scales_mm))
        if not self.scales_mm or min(self.scales_mm) <= 0:
            raise ValueError("need at least one positive scale")
        if self.n_translations < 1 or self.n_rotations < 1 or self.channels < 1:
            raise ValueError("view counts and channels must be >= 1")
        if self.max_translation_mm < 0:
            raise ValueError("max_translation_mm must be >= 0")
        if self.patch_px < 2:
            raise ValueError("patch_px must be >= 2")

    @property
    def n_views(self) -> int:
        return len(self.scales_mm) * self.n_translations * self.n_rotations

    @classmethod
    def from_dict(cls, d: dict) -> "ViewSampleConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales_mm"] = list(self.scales_mm)
        return d


@dataclass(frozen=True)
class ViewParams:
    """Provenance of one view: ROI edge length, axial shift (mm), angle (deg)."""

    scale_mm: float
    translation_mm: tuple[float, float]
    angle_deg: float


@dataclass(frozen=True)
class Patch:
    candidate_id: str
    pixels: np.ndarray = field(repr=False)  # (channels, px, px) in [0, 1]
    params: ViewParams


def draw_view_params(cfg: ViewSampleConfig, rng: np.random.Generator) -> list[ViewParams]:
    """Per scale: Nt shifts uniform in the disk, each with Nr uniform angles."""
    out = []
    for s in cfg.scales_mm:
        for _ in range(cfg.n_translations):
            r = cfg.max_translation_mm * math.sqrt(rng.uniform())
            theta = rng.uniform(0.0, 2 * math.pi)
            shift = (r * math.cos(theta), r * math.sin(theta))
            for _ in range(cfg.n_rotations):
                angle = rng.uniform(0.0, 360.0)
                out.append(ViewParams(s, shift, angle))
    return out


def _nearest_slice(volume: Volume, center) -> int:
    if not volume.contains(center):
        raise ViewOutOfBoundsError(f"ROI center {tuple(center)} lies outside the volume")
    k = int(round(volume.world_to_index(center)[2]))
    return min(max(k, 0), volume.dims[2] - 1)


def extract_views(
    volume: Volume,
    center,
    params: list[ViewParams],
    patch_px: int = 32,
    channels: int = 3,
) -> np.ndarray:
    """Windowed views stacked as float32 (n, channels, px, px).

    Each view is an s x s mm axial square on the slice nearest ``center``,
    centred at ``center + shift`` and rotated by the view angle. HU values are
    interpolated bilinearly (edge-clamped) before windowing.
    """
    center = np.asarray(center, dtype=float)
    k = _nearest_slice(volume, center)
    image = volume.data[:, :, k].astype(np.float64)
    sx, sy, _ = volume.spacing
    ox, oy, _ = volume.origin

    n = len(params)
    scale = np.array([p.scale_mm for p in params])
    shift = np.array([p.translation_mm for p in params], dtype=float).reshape(n, 2)
    alpha = np.deg2rad([p.angle_deg for p in params])
    cos, sin = np.cos(alpha), np.sin(alpha)

    grid = np.arange(patch_px) - (patch_px - 1) / 2.0
    u = grid[None, :, None] * (scale / patch_px)[:, None, None]
    w = grid[None, None, :] * (scale / patch_px)[:, None, None]
    cx = center[0] + shift[:, 0]
    cy = center[1] + shift[:, 1]
    wx = cx[:, None, None] + u * cos[:, None, None] - w * sin[:, None, None]
    wy = cy[:, None, None] + u * sin[:, None, None] + w * cos[:, None, None]
    coords = np.stack([(wx - ox) / sx, (wy - oy) / sy])
    hu = ndimage.map_coordinates(image, coords.reshape(2, -1), order=1, mode="nearest")
    views = window_normalize(hu).reshape(n, 1, patch_px, patch_px).astype(np.float32)
    return np.repeat(views, channels, axis=1)


def extract_patch(
    volume: Volume,
    center,
    scale_mm: float,
    translation_mm=(0.0, 0.0),
    angle_deg: float = 0.0,
    patch_px: int = 32,
    channels: int = 3,
    candidate_id: str = "",
) -> Patch:
    params = ViewParams(float(scale_mm), tuple(float(t) for t in translation_mm), float(angle_deg))
    pixels = extract_views(volume, center, [params], patch_px, channels)[0]
    return Patch(candidate_id, pixels, params)


def sample_views(volume: Volume, candidate, cfg: ViewSampleConfig, seed: int | None = None) -> list[Patch]:
    """N = scales x translations x rotations random views of one candidate."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = draw_view_params(cfg, rng)
    pixels = extract_views(volume, candidate.centroid, params, cfg.patch_px, cfg.channels)
    return [Patch(candidate.id, px, p) for px, p in zip(pixels, params)]


def sample_view_array(volume: Volume, center, cfg: ViewSampleConfig, seed: int):
    """Array form of :func:`sample_views`: (pixels, params)."""
    params = draw_view_params(cfg, np.random.default_rng(seed))
    return extract_views(volume, center, params, cfg.patch_px, cfg.channels), params


# -- batch files ------------------------------------------------------------


def write_patch_batch(patches: list[Patch], path) -> None:
    """``<stem>.json`` manifest plus ``<stem>.raw`` float32 LE payload, patch-major."""
    path = Path(path)
    if patches:
        shape = patches[0].pixels.shape
        if any(p.pixels.shape != shape for p in patches):
            raise ValueError("all patches in a batch need the same shape")
    else:
        shape = (0, 0, 0)
    manifest = {
        "shape": list(shape),
        "count": len(patches),
        "data": path.with_suffix(".raw").name,
        "patches": [
            {
                "candidate_id": p.candidate_id,
                "scale_mm": p.params.scale_mm,
                "translation_mm": list(p.params.translation_mm),
                "angle_deg": p.params.angle_deg,
            }
            for p in patches
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = b"".join(p.pixels.astype("<f4").tobytes() for p in patches)
    path.with_suffix(".raw").write_bytes(payload)
    path.with_suffix(".json").write_text(json.dumps(manifest), encoding="utf-8")


def read_patch_batch(path) -> list[Patch]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    shape = tuple(manifest["shape"])
    payload = (path.parent / manifest["data"]).read_bytes()
    per = int(np.prod(shape)) * 4
    if len(payload) != per * manifest["count"]:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, expected {per * manifest['count']}")
    data = np.frombuffer(payload, dtype="<f4").reshape((manifest["count"],) + shape)
    return [
        Patch(
            m["candidate_id"],
            data[i].astype(np.float32),
            ViewParams(m["scale_mm"], tuple(m["translation_mm"]), m["angle_deg"]),
        )
        for i, m in enumerate(manifest["patches"])
    ]
