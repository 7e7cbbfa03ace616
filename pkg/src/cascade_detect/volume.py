"""CT-like volumes: data model, resampling, windowing, phantoms and file I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

HU_MIN = -1024
HU_MAX = 3071
WINDOW_LOW = -250.0
WINDOW_HIGH = 1250.0
MIN_LESION_VOLUME_MM3 = 300.0


class VolumeFormatError(ValueError):
    """Raised for malformed or inconsistent volume files."""


class PhantomCapacityError(ValueError):
    """Raised when the requested lesions cannot be placed without overlap."""


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar HU grid indexed ``data[x, y, z]`` with per-axis spacing in mm."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be 3D with every dim >= 1, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or len(origin) != 3:
            raise ValueError("spacing and origin need three components")
        if not all(s > 0 and math.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        if data.size and (data.min() < HU_MIN or data.max() > HU_MAX):
            raise ValueError(f"HU values must lie in [{HU_MIN}, {HU_MAX}]")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def voxel_volume(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def world_to_index(self, point) -> np.ndarray:
        """Continuous voxel coordinates of world points (last axis of length 3)."""
        return (np.asarray(point, dtype=float) - np.asarray(self.origin)) / np.asarray(self.spacing)

    def index_to_world(self, index) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(index, dtype=float) * np.asarray(self.spacing)

    def contains(self, point) -> bool:
        idx = self.world_to_index(point)
        return bool(np.all(idx >= -0.5) and np.all(idx <= np.asarray(self.dims) - 0.5))

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.origin == other.origin
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None


@dataclass(frozen=True)
class GroundTruthLesion:
    """A lesion with its exact voxel mask (flat x-fastest indices, sorted)."""

    center: tuple[float, float, float]
    radius: tuple[float, float, float]
    voxel_indices: np.ndarray = field(repr=False, compare=False)
    volume_mm3: float = 0.0

    @property
    def evaluable(self) -> bool:
        return self.volume_mm3 > MIN_LESION_VOLUME_MM3

    def mask(self, dims) -> np.ndarray:
        return unflatten_mask(self.voxel_indices, dims)


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 32)
    spacing: tuple[float, float, float] = (1.0, 1.0, 5.0)
    spine_radius_mm: float = 24.0
    canal_radius_mm: float = 5.0
    canal_offset_mm: float = 11.0
    vertebra_hu: tuple[float, float] = (280.0, 420.0)
    vertebra_period_mm: float = 30.0
    lesion_count: int = 4
    lesion_hu_offset: tuple[float, float] = (250.0, 450.0)
    lesion_radius_mm: tuple[float, float] = (4.5, 6.5)
    lesion_z_elongation: float = 1.5
    distractor_count: int = 5
    halo_hu_offset: float = -120.0
    halo_width_mm: float = 2.5
    plate_count: int = 2
    background_hu: float = 0.0
    noise_sigma: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError("dims must be three counts >= 1")
        if min(self.spacing) <= 0:
            raise ValueError("spacing must be positive")
        if min(self.lesion_count, self.distractor_count, self.plate_count) < 0:
            raise ValueError("lesion and distractor counts must be >= 0")
        if self.halo_width_mm <= 0:
            raise ValueError("halo_width_mm must be > 0")
        for name in ("vertebra_hu", "lesion_hu_offset", "lesion_radius_mm"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be a non-degenerate range, got {(lo, hi)}")
        if self.lesion_radius_mm[0] <= 0 or self.lesion_z_elongation <= 0:
            raise ValueError("lesion radii must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.canal_radius_mm + abs(self.canal_offset_mm) >= self.spine_radius_mm:
            raise ValueError("canal must be enclosed by the spine")

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def window_normalize(hu, low: float = WINDOW_LOW, high: float = WINDOW_HIGH):
    """Map HU to [0, 1] through the bone window, clamping outside it."""
    out = np.clip((np.asarray(hu, dtype=float) - low) / (high - low), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _lerp_axis(values: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    """Linear interpolation along one axis at continuous indices, edge-clamped.

    Written as ``a + f * (b - a)`` so constant runs are reproduced exactly.
    """
    n = values.shape[axis]
    coords = np.clip(coords, 0.0, n - 1)
    i0 = np.minimum(np.floor(coords).astype(np.intp), max(n - 2, 0))
    i1 = np.minimum(i0 + 1, n - 1)
    frac = coords - i0
    a = np.take(values, i0, axis=axis)
    b = np.take(values, i1, axis=axis)
    shape = [1] * values.ndim
    shape[axis] = -1
    return a + frac.reshape(shape) * (b - a)


def resample_isometric(volume: Volume, target_spacing: float) -> Volume:
    """Trilinear resampling onto an isotropic grid with edge clamping.

    The output keeps the input origin; its extent is the largest multiple of
    ``target_spacing`` that fits in the input extent along each axis.
    """
    if not target_spacing > 0:
        raise ValueError("target_spacing must be > 0")
    t = float(target_spacing)
    if volume.spacing == (t, t, t):
        return volume
    counts = [
        int(math.floor((n - 1) * s / t + 1e-9)) + 1
        for n, s in zip(volume.dims, volume.spacing)
    ]
    values = volume.data.astype(np.float64)
    for axis, (c, s) in enumerate(zip(counts, volume.spacing)):
        values = _lerp_axis(values, np.arange(c) * t / s, axis)
    return Volume(values, (t, t, t), volume.origin)


# -- phantoms ---------------------------------------------------------------


def _world_grid(spec: PhantomSpec):
    sx, sy, sz = spec.spacing
    nx, ny, nz = spec.dims
    return (
        np.arange(nx)[:, None, None] * sx,
        np.arange(ny)[None, :, None] * sy,
        np.arange(nz)[None, None, :] * sz,
    )


def _spine_axis(spec: PhantomSpec) -> tuple[float, float]:
    nx, ny, _ = spec.dims
    sx, sy, _ = spec.spacing
    return (nx - 1) * sx / 2.0, (ny - 1) * sy / 2.0


def spine_construction_masks(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """(spine, canal) boolean masks exactly as the phantom builds them."""
    x, y, _ = _world_grid(spec)
    cx, cy = _spine_axis(spec)
    r2 = (x - cx) ** 2 + (y - cy) ** 2
    cylinder = np.broadcast_to(r2 <= spec.spine_radius_mm**2, spec.dims)
    canal_r2 = (x - cx) ** 2 + (y - (cy + spec.canal_offset_mm)) ** 2
    canal = np.broadcast_to(canal_r2 <= spec.canal_radius_mm**2, spec.dims)
    return cylinder & ~canal, canal.copy()


def _ellipsoid_box(dims, spacing, center, radii, angle=0.0):
    """Bounding-box slices and the local ellipsoid mask inside them."""
    reach = (max(radii[0], radii[1]), max(radii[0], radii[1]), radii[2])
    box = []
    for n, s, c, r in zip(dims, spacing, center, reach):
        lo = max(0, int(math.floor((c - r) / s)))
        hi = min(n, int(math.ceil((c + r) / s)) + 1)
        box.append(slice(lo, max(lo, hi)))
    x = np.arange(box[0].start, box[0].stop)[:, None, None] * spacing[0] - center[0]
    y = np.arange(box[1].start, box[1].stop)[None, :, None] * spacing[1] - center[1]
    z = np.arange(box[2].start, box[2].stop)[None, None, :] * spacing[2] - center[2]
    c, s = math.cos(angle), math.sin(angle)
    u = c * x + s * y
    w = -s * x + c * y
    local = (u / radii[0]) ** 2 + (w / radii[1]) ** 2 + (z / radii[2]) ** 2 <= 1.0
    return tuple(box), local


def ellipsoid_mask(dims, spacing, center, radii, angle: float = 0.0) -> np.ndarray:
    """Voxels whose centers fall in an ellipsoid rotated by ``angle`` (rad) in-plane."""
    box, local = _ellipsoid_box(dims, spacing, center, radii, angle)
    mask = np.zeros(tuple(dims), dtype=bool)
    mask[box] = local
    return mask


def _place(rng, spec, allowed, occupied, draw_shape, kind, max_attempts=400):
    """Rejection-sample a blob fully inside ``allowed`` and clear of ``occupied``."""
    sz = spec.spacing[2]
    cx, cy = _spine_axis(spec)
    nz = spec.dims[2]
    for _ in range(max_attempts):
        radii, angle = draw_shape()
        reach = spec.spine_radius_mm - min(radii[:2])
        z_hi = (nz - 1) * sz - radii[2]
        if reach <= 0 or z_hi < radii[2]:
            continue
        rho = reach * math.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * math.pi)
        zc = rng.uniform(radii[2], z_hi)
        center = (cx + rho * math.cos(phi), cy + rho * math.sin(phi), zc)
        box, local = _ellipsoid_box(spec.dims, spec.spacing, center, radii, angle)
        if not local.any() or np.any(local & ~allowed[box]) or np.any(local & occupied[box]):
            continue
        mask = np.zeros(spec.dims, dtype=bool)
        mask[box] = local
        return center, radii, mask, box
    raise PhantomCapacityError(
        f"could not place {kind} without overlap after {max_attempts} attempts"
    )


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, list[GroundTruthLesion]]:
    """Synthetic thick-slice spine volume with hyper-dense lesions.

    Lesions are round in-plane ellipsoids of uniform excess density. Two kinds
    of dense distractor are added and not reported: lesion-like blobs inside a
    lower-density halo, and plates elongated in-plane (end-plate like).
    """
    rng = np.random.default_rng(spec.seed)
    spine, canal = spine_construction_masks(spec)
    _, _, z = _world_grid(spec)

    lo, hi = spec.vertebra_hu
    phase = 0.5 * (1 + np.cos(2 * math.pi * z / spec.vertebra_period_mm))
    vertebra = lo + (hi - lo) * phase
    hu = np.full(spec.dims, spec.background_hu, dtype=np.float64)
    hu = np.where(spine, np.broadcast_to(vertebra, spec.dims), hu)
    hu[canal] = 20.0

    # capacity bound before any sampling
    r_min = spec.lesion_radius_mm[0]
    smallest = 4.0 / 3.0 * math.pi * r_min**3 * spec.lesion_z_elongation
    if spec.lesion_count * smallest > spine.sum() * np.prod(spec.spacing):
        raise PhantomCapacityError(
            f"{spec.lesion_count} lesions of radius >= {r_min} mm exceed the spine volume"
        )

    # blobs stay 5 px apart in-plane so spine tissue separates their basins
    gap = (5, 5, 1)
    occupied = np.zeros(spec.dims, dtype=bool)

    def reserve(mask, box):
        grown = tuple(
            slice(max(0, b.start - g), min(n, b.stop + g))
            for b, g, n in zip(box, gap, spec.dims)
        )
        size = tuple(2 * g + 1 for g in gap)
        occupied[grown] |= ndimage.maximum_filter(mask[grown], size=size, mode="constant")

    def lesion_shape():
        r = rng.uniform(*spec.lesion_radius_mm)
        return (r, r, r * spec.lesion_z_elongation), 0.0

    lesions = []
    for _ in range(spec.lesion_count):
        center, radii, mask, box = _place(rng, spec, spine, occupied, lesion_shape, "lesion")
        reserve(mask, box)
        hu[mask] += rng.uniform(*spec.lesion_hu_offset)
        idx = flatten_mask(mask)
        lesions.append(
            GroundTruthLesion(
                center=tuple(float(c) for c in center),
                radius=tuple(float(r) for r in radii),
                voxel_indices=idx,
                volume_mm3=float(idx.size * np.prod(spec.spacing)),
            )
        )

    def halo_shape():
        (r, _, rz), angle = lesion_shape()
        return (r + spec.halo_width_mm, r + spec.halo_width_mm, rz), angle

    for _ in range(spec.distractor_count):
        center, outer, mask, box = _place(rng, spec, spine, occupied, halo_shape, "distractor")
        reserve(mask, box)
        r = outer[0] - spec.halo_width_mm
        core = ellipsoid_mask(spec.dims, spec.spacing, center, (r, r, outer[2]))
        hu[mask & ~core] += spec.halo_hu_offset
        hu[core] += rng.uniform(*spec.lesion_hu_offset)

    def plate_shape():
        r = rng.uniform(*spec.lesion_radius_mm)
        aspect = rng.uniform(2.0, 3.0)
        long_r, short_r = r * math.sqrt(aspect), r / math.sqrt(aspect)
        return (long_r, short_r, r * spec.lesion_z_elongation), rng.uniform(0, math.pi)

    for _ in range(spec.plate_count):
        _, _, mask, box = _place(rng, spec, spine, occupied, plate_shape, "distractor")
        reserve(mask, box)
        hu[mask] += rng.uniform(*spec.lesion_hu_offset)

    if spec.noise_sigma > 0:
        hu += rng.normal(0.0, spec.noise_sigma, size=spec.dims)
    data = np.clip(np.rint(hu), HU_MIN, HU_MAX).astype(np.int16)
    return Volume(data, spec.spacing, (0.0, 0.0, 0.0)), lesions


# -- masks ------------------------------------------------------------------


def flatten_mask(mask: np.ndarray) -> np.ndarray:
    """Sorted flat indices (x-fastest) of the true voxels of a 3D mask."""
    return np.flatnonzero(np.asarray(mask).ravel(order="F")).astype(np.int64)


def unflatten_mask(indices, dims) -> np.ndarray:
    flat = np.zeros(int(np.prod(dims)), dtype=bool)
    flat[np.asarray(indices, dtype=np.int64)] = True
    return flat.reshape(tuple(dims), order="F")


def rle_encode(indices) -> list[list[int]]:
    """Run-length encode sorted flat indices as ``[start, length]`` pairs."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) != 1) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [idx.size]])
    return [[int(idx[s]), int(e - s)] for s, e in zip(starts, ends)]


def rle_decode(runs) -> np.ndarray:
    if not runs:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.arange(s, s + n, dtype=np.int64) for s, n in runs])


# -- file I/O ---------------------------------------------------------------


def write_volume(volume: Volume, path) -> Path:
    """Write ``<stem>.hdr`` and ``<stem>.raw``; returns the header path.

    The payload is int16, so the data must be integral.
    """
    path = Path(path)
    hdr = path.with_suffix(".hdr")
    raw = path.with_suffix(".raw")
    data = volume.data
    if not np.array_equal(data, np.rint(data)):
        raise ValueError("volume data must be integral HU to store as int16")
    hdr.parent.mkdir(parents=True, exist_ok=True)
    raw.write_bytes(data.astype("<i2").ravel(order="F").tobytes())
    fmt = lambda v: " ".join(repr(float(x)) if isinstance(x, float) else str(x) for x in v)  # noqa: E731
    hdr.write_text(
        f"dims = {fmt(volume.dims)}\n"
        f"spacing = {fmt(volume.spacing)}\n"
        f"origin = {fmt(volume.origin)}\n"
        f"data = {raw.name}\n",
        encoding="utf-8",
    )
    return hdr


def read_volume(path) -> Volume:
    hdr = Path(path).with_suffix(".hdr")
    fields = {}
    for lineno, line in enumerate(hdr.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise VolumeFormatError(f"{hdr}:{lineno}: expected 'key = value'")
        fields[key.strip()] = value.strip()
    missing = {"dims", "spacing", "origin", "data"} - fields.keys()
    if missing:
        raise VolumeFormatError(f"{hdr}: missing header keys {sorted(missing)}")
    try:
        dims = tuple(int(v) for v in fields["dims"].split())
        spacing = tuple(float(v) for v in fields["spacing"].split())
        origin = tuple(float(v) for v in fields["origin"].split())
    except ValueError as exc:
        raise VolumeFormatError(f"{hdr}: {exc}") from None
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise VolumeFormatError(f"{hdr}: dims, spacing and origin need 3 values")
    if min(dims) < 1:
        raise VolumeFormatError(f"{hdr}: dims must be >= 1, got {dims}")
    if min(spacing) <= 0:
        raise VolumeFormatError(f"{hdr}: spacing must be > 0, got {spacing}")
    payload = (hdr.parent / fields["data"]).read_bytes()
    expected = int(np.prod(dims)) * 2
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{hdr}: header declares {expected} payload bytes, found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<i2").reshape(dims, order="F").astype(np.int16)
    return Volume(data, spacing, origin)


def lesions_to_json(lesions: list[GroundTruthLesion]) -> list[dict]:
    return [
        {
            "center": list(les.center),
            "radius": list(les.radius),
            "volume_mm3": les.volume_mm3,
            "mask_rle": rle_encode(les.voxel_indices),
        }
        for les in lesions
    ]


def lesions_from_json(items: list[dict]) -> list[GroundTruthLesion]:
    return [
        GroundTruthLesion(
            center=tuple(d["center"]),
            radius=tuple(d["radius"]),
            voxel_indices=rle_decode(d["mask_rle"]),
            volume_mm3=float(d["volume_mm3"]),
        )
        for d in items
    ]


def write_lesions(lesions: list[GroundTruthLesion], path) -> None:
    Path(path).write_text(json.dumps(lesions_to_json(lesions), indent=1), encoding="utf-8")


def read_lesions(path) -> list[GroundTruthLesion]:
    return lesions_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
