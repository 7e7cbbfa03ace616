import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_detect.volume import (
    PhantomCapacityError,
    PhantomSpec,
    Volume,
    VolumeFormatError,
    ellipsoid_mask,
    generate_phantom,
    read_lesions,
    read_volume,
    resample_isometric,
    rle_decode,
    rle_encode,
    spine_construction_masks,
    window_normalize,
    write_lesions,
    write_volume,
)


def test_volume_rejects_bad_geometry():
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), (1, 0, 1))
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2)), (1, 1, 1))
    with pytest.raises(ValueError):
        Volume(np.full((2, 2, 2), 5000.0), (1, 1, 1))


def test_volume_is_immutable():
    v = Volume(np.zeros((2, 2, 2)), (1, 1, 1))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1


@pytest.mark.parametrize("hu,expected", [(-250, 0.0), (1250, 1.0), (500, 0.5), (-1000, 0.0), (3000, 1.0)])
def test_window_examples(hu, expected):
    assert window_normalize(hu) == expected


@given(st.floats(-1024, 3071), st.floats(-1024, 3071))
def test_window_monotone(a, b):
    lo, hi = sorted((a, b))
    assert window_normalize(lo) <= window_normalize(hi)


@given(st.floats(-250, 1250))
def test_window_affine_inside(hu):
    assert math.isclose(window_normalize(hu), (hu + 250) / 1500, abs_tol=1e-15)


def test_resample_identity_and_idempotent():
    rng = np.random.default_rng(0)
    v = Volume(rng.integers(-100, 100, (5, 6, 7)).astype(float), (2.0, 2.0, 2.0), (1, 2, 3))
    assert resample_isometric(v, 2.0) == v
    once = resample_isometric(Volume(v.data, (1, 1, 2), v.origin), 1.0)
    assert resample_isometric(once, 1.0) == once


def test_resample_constant():
    v = Volume(np.full((4, 5, 3), 123.0), (0.7, 1.3, 5.0))
    out = resample_isometric(v, 1.0)
    assert np.all(out.data == 123.0)
    assert out.spacing == (1.0, 1.0, 1.0)


def test_resample_linear_field_matches_closed_form():
    spacing = (0.8, 1.0, 5.0)
    origin = (-3.0, 2.0, 10.0)
    dims = (12, 9, 6)
    idx = np.indices(dims, dtype=float)
    world = [origin[a] + idx[a] * spacing[a] for a in range(3)]
    a, b, c, d = 2.0, -1.5, 0.75, 40.0
    field = a * world[0] + b * world[1] + c * world[2] + d
    out = resample_isometric(Volume(field, spacing, origin), 1.0)
    oidx = np.indices(out.dims, dtype=float)
    ow = [out.origin[k] + oidx[k] * out.spacing[k] for k in range(3)]
    expected = a * ow[0] + b * ow[1] + c * ow[2] + d
    assert np.max(np.abs(out.data - expected)) < 1e-4
    # extent preserved within one voxel
    for n, s, m in zip(dims, spacing, out.dims):
        assert abs((n - 1) * s - (m - 1) * 1.0) < 1.0


def test_resample_rejects_nonpositive():
    v = Volume(np.zeros((2, 2, 2)), (1, 1, 1))
    with pytest.raises(ValueError):
        resample_isometric(v, 0.0)


def test_phantom_determinism_and_bookkeeping():
    spec = PhantomSpec(seed=7)
    v1, l1 = generate_phantom(spec)
    v2, l2 = generate_phantom(spec)
    assert v1 == v2
    assert [x.center for x in l1] == [x.center for x in l2]
    spine, _ = spine_construction_masks(spec)
    flat_spine = spine.ravel(order="F")
    seen = set()
    for les in l1:
        assert np.all(flat_spine[les.voxel_indices])
        assert math.isclose(les.volume_mm3, len(les.voxel_indices) * v1.voxel_volume, rel_tol=1e-6)
        assert les.volume_mm3 > 300
        assert not seen & set(les.voxel_indices.tolist())
        seen |= set(les.voxel_indices.tolist())
    assert v1.data.min() >= -1024 and v1.data.max() <= 3071


def test_phantom_without_lesions():
    _, lesions = generate_phantom(PhantomSpec(lesion_count=0, seed=1))
    assert lesions == []


def test_phantom_capacity_error():
    with pytest.raises(PhantomCapacityError):
        generate_phantom(PhantomSpec(lesion_count=60, seed=0))


def test_phantom_settings_validation():
    with pytest.raises(ValueError):
        PhantomSpec(lesion_count=-1)
    with pytest.raises(ValueError):
        PhantomSpec(lesion_radius_mm=(5.0, 5.0))
    with pytest.raises(ValueError):
        PhantomSpec(noise_sigma=-1)


@pytest.mark.parametrize("r", [4.2, 4.5, 5.0, 6.5])
def test_min_radius_voxelization_exceeds_300(r):
    # brute-force voxel count of the smallest ellipsoid the generator can emit,
    # at every sub-voxel centre offset on a coarse grid
    spacing = (1.0, 1.0, 5.0)
    dims = (24, 24, 12)
    worst = math.inf
    for fx in (0.0, 0.25, 0.5):
        for fz in (0.0, 1.25, 2.5):
            c = (12.0 + fx, 12.0 + fx, 30.0 + fz)
            m = ellipsoid_mask(dims, spacing, c, (r, r, 1.5 * r))
            worst = min(worst, m.sum() * 5.0)
    assert worst > 300


def test_volume_roundtrip(tmp_path):
    v, lesions = generate_phantom(PhantomSpec(seed=3))
    write_volume(v, tmp_path / "vol")
    assert read_volume(tmp_path / "vol") == v
    write_lesions(lesions, tmp_path / "les.json")
    back = read_lesions(tmp_path / "les.json")
    assert all(np.array_equal(a.voxel_indices, b.voxel_indices) for a, b in zip(lesions, back))
    assert [a.volume_mm3 for a in lesions] == [b.volume_mm3 for b in back]


def test_read_volume_errors(tmp_path):
    v = Volume(np.zeros((2, 3, 4)), (1, 1, 1))
    hdr = write_volume(v, tmp_path / "a")
    text = hdr.read_text()
    hdr.write_text(text.replace("dims = 2 3 4", "dims = 3 3 4"))
    with pytest.raises(VolumeFormatError, match="payload"):
        read_volume(tmp_path / "a")
    hdr.write_text(text.replace("spacing = 1.0 1.0 1.0", "spacing = 1.0 0.0 1.0"))
    with pytest.raises(VolumeFormatError, match="spacing"):
        read_volume(tmp_path / "a")
    hdr.write_text("dims = 2 3 4\n")
    with pytest.raises(VolumeFormatError, match="missing"):
        read_volume(tmp_path / "a")


def test_write_rejects_fractional():
    v = Volume(np.full((2, 2, 2), 0.5), (1, 1, 1))
    with pytest.raises(ValueError):
        write_volume(v, "/tmp/never")


@settings(max_examples=50)
@given(st.sets(st.integers(0, 500), max_size=60))
def test_rle_roundtrip(indices):
    arr = np.array(sorted(indices), dtype=np.int64)
    assert np.array_equal(rle_decode(rle_encode(arr)), arr)
