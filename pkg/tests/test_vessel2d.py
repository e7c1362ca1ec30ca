import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import chamfer_bruteforce, otsu_exhaustive
from scipy.spatial import cKDTree
from skimage.morphology import thin

from faz3d.config import PipelineConfig
from faz3d.morphology import count_components
from faz3d.phantom import generate_phantom, ring_phantom_spec
from faz3d.vessel2d import (
    DegenerateImageError,
    distance_transform,
    frangi_enhance,
    otsu_threshold,
    segment_plexus_2d,
    skeleton_radii,
    skeletonize,
)
from faz3d.volume_io import EnFaceImage

masks = arrays(bool, st.tuples(st.integers(1, 32), st.integers(1, 32)), elements=st.booleans())


def _unit_width(sk):
    pad = np.pad(sk, 1)
    full = np.ones_like(sk)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            full &= pad[1 + dx : 1 + dx + sk.shape[0], 1 + dy : 1 + dy + sk.shape[1]]
    return not full.any() and np.array_equal(thin(sk), sk)


# -------------------------------------------------------------- vesselness


def _tube(angle_deg, n=96, half_width=2.0):
    x, y = np.meshgrid(np.arange(n) - n / 2, np.arange(n) - n / 2, indexing="ij")
    a = np.deg2rad(angle_deg)
    dist = np.abs(-np.sin(a) * x + np.cos(a) * y)
    return np.where(dist <= half_width, 1.0, 0.1)


def test_frangi_constant_is_zero():
    assert not frangi_enhance(np.full((32, 32), 0.7)).any()


def test_frangi_tube_contrast_and_rotation():
    flat = frangi_enhance(_tube(0))
    diag = frangi_enhance(_tube(45))
    n = 96
    center = flat[n // 2, n // 2]
    background = flat[np.abs(np.arange(n) - n / 2)[None, :].repeat(n, 0) > 12].mean()
    assert center > 10 * background
    assert diag[n // 2, n // 2] == pytest.approx(center, rel=0.2)


def test_frangi_polarity_and_range():
    img = _tube(0)
    bright = frangi_enhance(img)
    dark = frangi_enhance(1.1 - img)
    assert bright.min() >= 0 and bright.max() <= 1
    assert dark[48, 48] < 0.01 * bright[48, 48]


def test_frangi_default_scales():
    cfg = PipelineConfig()
    assert cfg.frangi.sigmas == (2.0, 3.0)
    one = PipelineConfig.from_dict({"frangi": {"scale_range": [2, 2]}})
    img = _tube(0) + 0.01 * np.random.default_rng(0).random((96, 96))
    assert not np.array_equal(frangi_enhance(img, cfg), frangi_enhance(img, one))


# -------------------------------------------------------------------- Otsu


def test_otsu_two_delta():
    img = np.full(100, 0.1)
    img[:40] = 0.9
    np.random.default_rng(0).shuffle(img)
    img = img.reshape(10, 10)
    mask, t = otsu_threshold(img)
    assert 0.1 < t < 0.9
    assert np.array_equal(mask, img == 0.9)


@pytest.mark.parametrize("seed", range(25))
def test_otsu_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    img = rng.gamma(2.0, size=(32, 32)) if seed % 2 else rng.random((32, 32)) ** 3
    k, t, mask, _ = otsu_exhaustive(img)
    got_mask, got_t = otsu_threshold(img)
    assert got_t == t
    assert np.array_equal(got_mask, mask)


def test_otsu_constant_image():
    mask, t = otsu_threshold(np.full((5, 5), 2.0))
    assert not mask.any() and np.isnan(t)
    with pytest.raises(DegenerateImageError):
        otsu_threshold(np.full((5, 5), 2.0), strict=True)


# --------------------------------------------------------------- skeleton


def test_skeleton_of_bar():
    m = np.zeros((9, 30), bool)
    m[3:6, 5:25] = True
    sk = skeletonize(m)
    rows = np.unique(np.nonzero(sk)[0])
    assert rows.tolist() == [4]
    assert 18 <= sk.sum() <= 20
    assert count_components(sk) == 1


def test_skeleton_trivial_cases():
    assert not skeletonize(np.zeros((5, 5), bool)).any()
    one = np.zeros((5, 5), bool)
    one[2, 3] = True
    assert np.array_equal(skeletonize(one), one)


@settings(max_examples=200, deadline=None)
@given(masks)
def test_skeleton_properties(m):
    sk = skeletonize(m)
    assert not (sk & ~m).any()
    assert count_components(sk) == count_components(m)
    assert _unit_width(sk)


# ------------------------------------------------------- distance transform


def test_dt_single_pixel():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    dt = distance_transform(m)
    assert dt[2, 2] == 1 and dt.sum() == 1


def test_dt_disk_center():
    x, y = np.meshgrid(np.arange(41) - 20, np.arange(41) - 20, indexing="ij")
    dt = distance_transform(x**2 + y**2 <= 100)
    assert dt[20, 20] == pytest.approx(10, rel=0.08)


def test_dt_all_foreground_is_inf():
    assert np.isinf(distance_transform(np.ones((3, 4), bool))).all()


@settings(max_examples=150, deadline=None)
@given(masks)
def test_dt_matches_bruteforce(m):
    assert np.array_equal(distance_transform(m), chamfer_bruteforce(m))


# ------------------------------------------------------------------ radii


def test_radii_on_tube():
    m = np.zeros((21, 60), bool)
    m[7:14, :] = True  # three pixels either side of the centre row
    sk = skeletonize(m)
    r = skeleton_radii(sk, distance_transform(m))
    inner = (r.points[:, 1] > 8) & (r.points[:, 1] < 52)
    assert inner.any() and np.all(r.radius[inner] == 3)
    assert np.all(r.points[inner, 0] == 10)


def test_radius_floor():
    m = np.zeros((7, 7), bool)
    m[3, 3] = True
    r = skeleton_radii(skeletonize(m), distance_transform(m))
    assert r.radius.tolist() == [1]


def test_radii_width_step():
    m = np.zeros((30, 60), bool)
    m[12:17, :30] = True
    m[10:19, 30:] = True
    r = skeleton_radii(skeletonize(m), distance_transform(m))
    assert set(r.radius.tolist()) <= {2, 3, 4}
    row = r.points[:, 0] == 14
    order = np.argsort(r.points[row, 1])
    assert np.all(np.diff(r.radius[row][order]) >= 0)


# ---------------------------------------------------------- composition


@pytest.mark.parametrize("noise", [0.0, 0.2])
def test_segment_recall_on_phantom(noise):
    spec = ring_phantom_spec(nx=128, ny=128, nz=96, faz_radius_um=120.0, noise_sigma=noise, speckle=noise, seed=11)
    _, _, enfaces, truth = generate_phantom(spec)
    need = 0.95 if noise == 0 else 0.90
    for img in enfaces:
        seg = segment_plexus_2d(img)
        true_xy = np.unique(truth.centerlines[img.plexus].points[:, :2], axis=0)
        d, _ = cKDTree(seg.skeleton.points).query(true_xy, p=np.inf)
        assert (d <= 1).mean() >= need, img.plexus
        assert not (seg.skeleton_mask & ~seg.mask).any()
        assert np.all(seg.distance[seg.skeleton.points[:, 0], seg.skeleton.points[:, 1]] > 0)


def test_segment_dark_image():
    seg = segment_plexus_2d(EnFaceImage(np.zeros((20, 20), np.float32), "deep"))
    assert not seg.mask.any() and len(seg.skeleton) == 0
    with pytest.raises(DegenerateImageError, match="deep"):
        segment_plexus_2d(EnFaceImage(np.zeros((20, 20), np.float32), "deep"), strict=True)
