import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cascade_detect.views import (
    Patch,
    ViewOutOfBoundsError,
    ViewSampleConfig,
    draw_view_params,
    extract_patch,
    read_patch_batch,
    sample_views,
    write_patch_batch,
)
from cascade_detect.volume import Volume, window_normalize


class _Cand:
    def __init__(self, centroid, id="c0"):
        self.centroid = centroid
        self.id = id


def _random_volume(seed=0, shape=(80, 80, 6), spacing=(1.0, 1.0, 5.0)):
    rng = np.random.default_rng(seed)
    return Volume(rng.integers(-400, 1500, shape).astype(float), spacing)


def test_default_config_emits_100_checked_patches():
    cfg = ViewSampleConfig()
    assert cfg.n_views == 100 == 4 * 5 * 5
    vol = _random_volume()
    patches = sample_views(vol, _Cand((40.0, 40.0, 10.0)), cfg, seed=1)
    assert len(patches) == 100
    for p in patches:
        assert p.pixels.shape == (3, 32, 32) and p.pixels.dtype == np.float32
        assert np.all((p.pixels >= 0) & (p.pixels <= 1))
        assert np.array_equal(p.pixels[0], p.pixels[1]) and np.array_equal(p.pixels[0], p.pixels[2])
        assert p.params.scale_mm in (30.0, 35.0, 40.0, 45.0)
        assert math.hypot(*p.params.translation_mm) <= 3.0
        assert 0.0 <= p.params.angle_deg < 360.0
    # each scale: 5 translations x 5 rotations
    for s in cfg.scales_mm:
        group = [p for p in patches if p.params.scale_mm == s]
        assert len(group) == 25
        assert len({p.params.translation_mm for p in group}) == 5


def test_window_bounds_used():
    vol = Volume(np.full((40, 40, 2), -250.0), (1, 1, 5))
    assert np.all(extract_patch(vol, (20, 20, 0), 32).pixels == 0.0)
    vol = Volume(np.full((40, 40, 2), 1250.0), (1, 1, 5))
    assert np.all(extract_patch(vol, (20, 20, 0), 32).pixels == 1.0)


def test_single_view_config():
    cfg = ViewSampleConfig(scales_mm=(30,), n_translations=1, n_rotations=1)
    assert len(sample_views(_random_volume(), _Cand((40.0, 40.0, 10.0)), cfg, seed=0)) == 1


def test_seeded_determinism():
    vol = _random_volume()
    cand = _Cand((40.0, 40.0, 10.0))
    a = sample_views(vol, cand, ViewSampleConfig(), seed=3)
    b = sample_views(vol, cand, ViewSampleConfig(), seed=3)
    c = sample_views(vol, cand, ViewSampleConfig(), seed=4)
    assert all(np.array_equal(x.pixels, y.pixels) and x.params == y.params for x, y in zip(a, b))
    assert [x.params for x in a] != [x.params for x in c]


def test_config_validation():
    for bad in (dict(scales_mm=()), dict(n_translations=0), dict(max_translation_mm=-1), dict(patch_px=1)):
        with pytest.raises(ValueError):
            ViewSampleConfig(**bad)


def test_identity_crop_at_zero_angle():
    vol = _random_volume(1)
    x0, y0, k = 20, 30, 3
    # even patch: the pixel grid centre sits between voxels
    center = (x0 + 15.5, y0 + 15.5, k * 5.0)
    patch = extract_patch(vol, center, 32.0)
    expected = window_normalize(vol.data[x0 : x0 + 32, y0 : y0 + 32, k]).astype(np.float32)
    assert np.array_equal(patch.pixels[0], expected)


def test_rotation_90_symmetric_pattern():
    x, y = np.indices((64, 64))
    img = np.where((x - 31.5) ** 2 + (y - 31.5) ** 2 < 100, 900.0, -100.0)
    vol = Volume(np.stack([img, img], axis=2), (1, 1, 5))
    c = (31.5, 31.5, 0.0)
    a = extract_patch(vol, c, 32, angle_deg=0).pixels
    b = extract_patch(vol, c, 32, angle_deg=90).pixels
    assert np.max(np.abs(a - b)) < 1e-6


def test_rotation_90_matches_index_permutation():
    vol = _random_volume(2, shape=(64, 64, 2))
    c = (31.5, 30.5, 5.0)
    p0 = extract_patch(vol, c, 32, angle_deg=0).pixels[0]
    p90 = extract_patch(vol, c, 32, angle_deg=90).pixels[0]
    P = 32
    oracle = np.array([[p0[P - 1 - j, i] for j in range(P)] for i in range(P)])
    assert np.max(np.abs(p90 - oracle)) < 1e-4


def test_translation_consistency():
    rng = np.random.default_rng(9)
    base = np.zeros((90, 90, 3))
    base[20:60, 20:60] = rng.integers(-300, 1400, (40, 40, 3))
    shifted = np.zeros_like(base)
    shifted[23:63, 18:58] = base[20:60, 20:60]
    a = extract_patch(Volume(base, (1, 1, 5)), (40.2, 40.7, 5.0), 30, (0.5, -1.0), 33.0)
    b = extract_patch(Volume(shifted, (1, 1, 5)), (43.2, 38.7, 5.0), 30, (0.5, -1.0), 33.0)
    assert np.array_equal(a.pixels, b.pixels)


def test_out_of_bounds_center():
    vol = _random_volume()
    with pytest.raises(ViewOutOfBoundsError):
        extract_patch(vol, (500.0, 10.0, 10.0), 30)
    with pytest.raises(ViewOutOfBoundsError):
        sample_views(vol, _Cand((10.0, 10.0, -20.0)), ViewSampleConfig(), seed=0)


def test_edges_are_clamped():
    vol = _random_volume()
    p = extract_patch(vol, (0.0, 0.0, 0.0), 45, angle_deg=33)
    assert np.all((p.pixels >= 0) & (p.pixels <= 1))


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(5, 60), min_size=1, max_size=3),
    st.integers(1, 3),
    st.integers(1, 3),
    st.floats(0, 6),
    st.integers(2, 12),
    st.integers(0, 2**32 - 1),
)
def test_provenance_bounds_property(scales, nt, nr, tmax, px, seed):
    cfg = ViewSampleConfig(tuple(scales), nt, nr, tmax, px, 1)
    patches = sample_views(_random_volume(), _Cand((40.0, 40.0, 10.0)), cfg, seed=seed)
    assert len(patches) == cfg.n_views
    for p in patches:
        assert p.params.scale_mm in cfg.scales_mm
        assert math.hypot(*p.params.translation_mm) <= tmax + 1e-12
        assert 0 <= p.params.angle_deg < 360
        assert p.pixels.shape == (1, px, px)
        assert np.all((p.pixels >= 0) & (p.pixels <= 1))


def test_draw_uniformity_chi_square():
    cfg = ViewSampleConfig(scales_mm=(30,), n_translations=2000, n_rotations=5)
    params = draw_view_params(cfg, np.random.default_rng(cfg.seed))
    assert len(params) >= 10**4
    angles = np.array([p.angle_deg for p in params])
    shifts = np.array([p.translation_mm for p in params[:: cfg.n_rotations]])
    r2 = (shifts**2).sum(axis=1) / 9.0  # uniform on [0, 1] for a uniform disk
    theta = np.mod(np.arctan2(shifts[:, 1], shifts[:, 0]), 2 * np.pi)
    for values, hi in ((angles, 360.0), (r2, 1.0), (theta, 2 * np.pi)):
        counts, _ = np.histogram(values, bins=20, range=(0, hi))
        assert stats.chisquare(counts).pvalue > 0.01


def test_patch_batch_roundtrip(tmp_path):
    vol = _random_volume()
    patches = sample_views(vol, _Cand((40.0, 40.0, 10.0), "x1"), ViewSampleConfig(n_translations=2, n_rotations=2), 0)
    write_patch_batch(patches, tmp_path / "batch")
    back = read_patch_batch(tmp_path / "batch")
    assert len(back) == len(patches)
    for a, b in zip(patches, back):
        assert isinstance(b, Patch) and b.candidate_id == "x1"
        assert np.array_equal(a.pixels, b.pixels) and a.params == b.params
    raw = (tmp_path / "batch.raw").read_bytes()
    assert len(raw) == len(patches) * 3 * 32 * 32 * 4
    (tmp_path / "batch.raw").write_bytes(raw[:-4])
    with pytest.raises(ValueError):
        read_patch_batch(tmp_path / "batch")
