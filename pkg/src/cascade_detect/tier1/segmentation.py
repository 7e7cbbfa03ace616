"""Spine segmentation, per-slice watershed, greedy merging and 3D stacking."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..volume import Volume

class NoSpineFoundError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpineMask:
    spine: np.ndarray
    canal: np.ndarray

    @property
    def voxel_count(self) -> int:
        return int(self.spine.sum())


@dataclass(frozen=True)
class SubSegment2D:
    """Pixels of one watershed region on axial slice ``z``.

    ``pixels`` is an (n, 2) array of (x, y) indices in lexicographic order.
    """

    id: int
    z: int
    pixels: np.ndarray = field(repr=False)
    mean_hu: float
    centroid: tuple[float, float, float]

    @property
    def size(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class Detection3D:
    members: tuple[SubSegment2D, ...]
    voxels: np.ndarray = field(repr=False)  # (n, 3) x, y, z indices
    centroid: tuple[float, float, float]
    mean_hu: float

    @property
    def slices(self) -> list[int]:
        return sorted({m.z for m in self.members})


def segment_spine(
    volume: Volume,
    hu_threshold: float = 200.0,
    growing_tolerance: float = 100.0,
    min_component_voxels: int = 200,
) -> SpineMask:
    """Threshold, keep large components, region-grow, and extract the canal."""
    data = volume.data
    seeds = data >= hu_threshold
    labels, n = ndimage.label(seeds)
    if n == 0:
        raise NoSpineFoundError(f"no voxel at or above {hu_threshold} HU")
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    keep = np.flatnonzero(sizes >= min_component_voxels)
    if keep.size == 0:
        raise NoSpineFoundError(
            f"largest component has {sizes.max()} voxels, need {min_component_voxels}"
        )
    seed_mask = np.isin(labels, keep)
    spine = ndimage.binary_propagation(seed_mask, mask=data >= hu_threshold - growing_tolerance)
    filled = np.stack(
        [ndimage.binary_fill_holes(spine[:, :, z]) for z in range(spine.shape[2])], axis=2
    )
    return SpineMask(spine=spine, canal=filled & ~spine)


def _smooth_in_mask(image: np.ndarray, mask: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.where(mask, image, 0.0)
    m = mask.astype(np.float64)
    num = ndimage.gaussian_filter(image * m, sigma, mode="constant")
    den = ndimage.gaussian_filter(m, sigma, mode="constant")
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=mask)
    # quantize so a flat region does not sprout rounding-level maxima
    return np.round(out, 6)


def _label_image(segments, shape) -> np.ndarray:
    labels = np.full(shape, -1, dtype=np.int64)
    for seg in segments:
        labels[seg.pixels[:, 0], seg.pixels[:, 1]] = seg.id
    return labels


def _make_segment(seg_id, z, pixels, hu, spacing, origin) -> SubSegment2D:
    pixels = pixels[np.lexsort((pixels[:, 1], pixels[:, 0]))]
    mean = float(hu[pixels[:, 0], pixels[:, 1]].mean())
    cx, cy = pixels.mean(axis=0)
    centroid = (
        origin[0] + cx * spacing[0],
        origin[1] + cy * spacing[1],
        origin[2] + z * spacing[2],
    )
    return SubSegment2D(int(seg_id), int(z), pixels, mean, tuple(float(c) for c in centroid))


def watershed_subsegments(
    slice_hu: np.ndarray,
    mask: np.ndarray,
    z: int = 0,
    sigma: float = 1.0,
    spacing=(1.0, 1.0, 1.0),
    origin=(0.0, 0.0, 0.0),
) -> list[SubSegment2D]:
    """Marker-based watershed of one axial slice restricted to ``mask``.

    Basins grow from regional maxima of the smoothed density, flooding in
    decreasing density. Equal densities are processed by lowest linear index.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    hu = np.asarray(slice_hu, dtype=np.float64)
    smooth = _smooth_in_mask(hu, mask, sigma)
    masked = np.where(mask, smooth, -np.inf)
    local_max = ndimage.maximum_filter(masked, size=3, mode="constant", cval=-np.inf)
    markers, n_markers = ndimage.label(mask & (masked >= local_max), structure=np.ones((3, 3)))
    # flooding is 4-connected: seed any 4-component left without a marker at its maximum
    comps, n_comps = ndimage.label(mask)
    seeded = np.zeros(n_comps + 1, dtype=bool)
    seeded[comps[markers > 0]] = True
    for comp in np.flatnonzero(~seeded[1:]) + 1:
        flat = np.flatnonzero(comps.ravel() == comp)
        top = flat[np.argmax(masked.ravel()[flat])]  # first index among ties
        n_markers += 1
        markers.ravel()[top] = n_markers

    nx, ny = mask.shape
    # flat Python lists: the flood loop is scalar work
    inside = mask.ravel().tolist()
    height = (-smooth).ravel().tolist()
    labels = (markers.ravel() - 1).tolist()
    heap = []
    order = itertools.count()

    def push_neighbours(lin, lab):
        i, j = divmod(lin, ny)
        for nb, ok in ((lin - ny, i > 0), (lin + ny, i < nx - 1), (lin - 1, j > 0), (lin + 1, j < ny - 1)):
            if ok and inside[nb] and labels[nb] < 0:
                heapq.heappush(heap, (height[nb], nb, next(order), lab))

    for lin in np.flatnonzero(markers.ravel()).tolist():
        push_neighbours(lin, labels[lin])
    while heap:
        _, lin, _, lab = heapq.heappop(heap)
        if labels[lin] >= 0:
            continue
        labels[lin] = lab
        push_neighbours(lin, lab)
    labels = np.asarray(labels, dtype=np.int64).reshape(nx, ny)

    coords = np.argwhere(labels >= 0)  # lexicographic (x, y) order
    owner = labels[coords[:, 0], coords[:, 1]]
    order_ = np.argsort(owner, kind="stable")
    bounds = np.searchsorted(owner[order_], np.arange(n_markers + 1))
    segments = []
    for lab in range(n_markers):
        pix = coords[order_[bounds[lab] : bounds[lab + 1]]]
        if len(pix):
            segments.append(_make_segment(len(segments), z, pix, hu, spacing, origin))
    return segments


def _adjacency(labels: np.ndarray) -> set[tuple[int, int]]:
    pairs = set()
    for a, b in ((labels[1:, :], labels[:-1, :]), (labels[:, 1:], labels[:, :-1])):
        sel = (a >= 0) & (b >= 0) & (a != b)
        for u, v in zip(a[sel].tolist(), b[sel].tolist()):
            pairs.add((min(u, v), max(u, v)))
    return pairs


def merge_subsegments(
    segments: list[SubSegment2D],
    hu_merge_threshold: float,
    slice_hu: np.ndarray | None = None,
    spacing=(1.0, 1.0, 1.0),
    origin=(0.0, 0.0, 0.0),
) -> list[SubSegment2D]:
    """Greedily merge the most similar adjacent pair while it differs by less
    than ``hu_merge_threshold``. Ties go to the pair with the smaller ids; the
    merged segment keeps the smaller id.
    """
    if len(segments) < 2:
        return list(segments)
    shape = tuple(int(max(s.pixels[:, k].max() for s in segments)) + 1 for k in range(2))
    if slice_hu is not None:
        shape = slice_hu.shape
    labels = _label_image(segments, shape)

    mean = {s.id: s.mean_hu for s in segments}
    size = {s.id: s.size for s in segments}
    pixels = {s.id: [s.pixels] for s in segments}
    neigh = {s.id: set() for s in segments}
    for u, v in _adjacency(labels):
        neigh[u].add(v)
        neigh[v].add(u)
    version = {s.id: 0 for s in segments}

    heap = []

    def push(u, v):
        a, b = min(u, v), max(u, v)
        diff = abs(mean[a] - mean[b])
        if diff < hu_merge_threshold:
            heapq.heappush(heap, (diff, a, b, version[a], version[b]))

    for u in neigh:
        for v in neigh[u]:
            if u < v:
                push(u, v)
    while heap:
        _, a, b, va, vb = heapq.heappop(heap)
        if a not in mean or b not in mean or version[a] != va or version[b] != vb:
            continue
        total = size[a] + size[b]
        mean[a] = (mean[a] * size[a] + mean[b] * size[b]) / total
        size[a] = total
        pixels[a].extend(pixels.pop(b))
        for c in neigh.pop(b):
            if c != a:
                neigh[c].discard(b)
                neigh[c].add(a)
                neigh[a].add(c)
        neigh[a].discard(b)
        del mean[b], size[b], version[b]
        version[a] += 1
        for c in neigh[a]:
            push(a, c)

    z = segments[0].z
    out = []
    for seg_id in sorted(mean):
        pix = np.concatenate(pixels[seg_id])
        pix = pix[np.lexsort((pix[:, 1], pix[:, 0]))]
        cx, cy = pix.mean(axis=0)
        centroid = (
            origin[0] + cx * spacing[0],
            origin[1] + cy * spacing[1],
            origin[2] + z * spacing[2],
        )
        if slice_hu is not None:
            m = float(np.asarray(slice_hu, dtype=np.float64)[pix[:, 0], pix[:, 1]].mean())
        else:
            m = float(mean[seg_id])
        out.append(SubSegment2D(seg_id, z, pix, m, tuple(float(c) for c in centroid)))
    return out


def select_dense_segments(
    segments: list[SubSegment2D],
    contrast_hu: float,
    slice_hu: np.ndarray | None = None,
    spacing=(1.0, 1.0, 1.0),
    origin=(0.0, 0.0, 0.0),
    core_hu: float | None = None,
) -> list[SubSegment2D]:
    """2D detections: segments denser than their neighbours.

    A segment qualifies when its mean exceeds the size-weighted mean of its
    neighbours by at least ``contrast_hu``; segments without neighbours never
    do. With ``slice_hu`` the detection keeps only its pixels at or above that
    reference plus ``core_hu`` (default ``contrast_hu``), which strips the
    spine rim a basin picks up while flooding.
    """
    if len(segments) < 2:
        return []
    shape = tuple(int(max(s.pixels[:, k].max() for s in segments)) + 1 for k in range(2))
    labels = _label_image(segments, shape)
    by_id = {s.id: s for s in segments}
    neigh = {s.id: set() for s in segments}
    for u, v in _adjacency(labels):
        neigh[u].add(v)
        neigh[v].add(u)
    chosen = []
    next_id = max(by_id) + 1
    for seg in segments:
        if not neigh[seg.id]:
            continue
        others = [by_id[n] for n in sorted(neigh[seg.id])]
        ref = sum(o.mean_hu * o.size for o in others) / sum(o.size for o in others)
        if seg.mean_hu - ref < contrast_hu:
            continue
        if slice_hu is None:
            chosen.append(seg)
            continue
        hu = np.asarray(slice_hu, dtype=np.float64)
        level = ref + (contrast_hu if core_hu is None else core_hu)
        keep = seg.pixels[hu[seg.pixels[:, 0], seg.pixels[:, 1]] >= level]
        if not len(keep):
            continue
        # a merged segment can hold several dense blobs; each is its own detection
        lo = keep.min(axis=0)
        grid = np.zeros(tuple(keep.max(axis=0) - lo + 1), dtype=bool)
        grid[keep[:, 0] - lo[0], keep[:, 1] - lo[1]] = True
        comp, n = ndimage.label(grid)
        for k in range(1, n + 1):
            pix = np.argwhere(comp == k) + lo
            seg_id = seg.id if k == 1 else next_id
            next_id += k > 1
            chosen.append(_make_segment(seg_id, seg.z, pix, hu, spacing, origin))
    return chosen


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def stack_detections(
    per_slice: dict[int, list[SubSegment2D]],
    min_overlap_px: int = 1,
    spacing=(1.0, 1.0, 1.0),
    origin=(0.0, 0.0, 0.0),
) -> list[Detection3D]:
    """Join 2D detections on consecutive slices that share enough (x, y) pixels."""
    flat = [seg for z in sorted(per_slice) for seg in per_slice[z]]
    index = {id(seg): k for k, seg in enumerate(flat)}
    uf = _UnionFind(len(flat))
    by_z = {z: per_slice[z] for z in per_slice}
    for z in sorted(by_z):
        if z + 1 not in by_z:
            continue
        for a in by_z[z]:
            pa = {(int(x), int(y)) for x, y in a.pixels}
            for b in by_z[z + 1]:
                shared = sum((int(x), int(y)) in pa for x, y in b.pixels)
                if shared >= min_overlap_px:
                    uf.union(index[id(a)], index[id(b)])

    groups: dict[int, list[SubSegment2D]] = {}
    for k, seg in enumerate(flat):
        groups.setdefault(uf.find(k), []).append(seg)

    detections = []
    for members in groups.values():
        members = sorted(members, key=lambda s: (s.z, tuple(s.pixels[0])))
        voxels = np.concatenate(
            [np.column_stack([m.pixels, np.full(m.size, m.z)]) for m in members]
        )
        voxels = voxels[np.lexsort((voxels[:, 0], voxels[:, 1], voxels[:, 2]))]
        centroid = np.asarray(origin) + voxels.mean(axis=0) * np.asarray(spacing)
        mean_hu = sum(m.mean_hu * m.size for m in members) / len(voxels)
        detections.append(
            Detection3D(tuple(members), voxels, tuple(float(c) for c in centroid), float(mean_hu))
        )
    detections.sort(key=lambda d: (d.members[0].z, tuple(d.members[0].pixels[0])))
    return detections
