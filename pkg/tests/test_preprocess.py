import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import gaussian_kernel_1d

from faz3d.config import PipelineConfig
from faz3d.preprocess import (
    derive_plexus_bounds,
    flatten_on_rpe,
    gaussian3d,
    outlier_mask,
    preprocess_scan,
    regularize_surface,
    regularize_surfaces,
    resample_axial,
    rescale_surfaces,
)
from faz3d.volume_io import OctaVolume, SurfaceSet


def _planes(shape, *levels):
    return SurfaceSet(*(np.full(shape, float(v)) for v in levels))


# ------------------------------------------------------------- resampling


def test_resample_identity_at_native_pitch():
    rng = np.random.default_rng(0)
    vol = OctaVolume(rng.random((4, 5, 96), dtype=np.float32), 3.87, 3.87)
    out = resample_axial(vol)
    assert out.dims == (4, 5, 96)
    assert np.array_equal(out.data, vol.data)
    assert out.isotropic and out.res_axial == 3.87


def test_resample_halving():
    vol = OctaVolume(np.zeros((2, 2, 96), np.float32), 7.74, 3.87)
    assert resample_axial(vol).dims[2] == 48


def test_resample_clinical_depth_and_ramp():
    z = np.arange(496, dtype=np.float32)
    vol = OctaVolume(np.broadcast_to(z, (3, 2, 496)).copy(), 5.7, 3.87)
    out = resample_axial(vol)
    assert out.dims == (3, 2, 337)
    ratio = 3.87 / 5.7
    expected = np.minimum(np.arange(337) / ratio, 495.0)
    # a ramp stays a ramp: exact up to float32 rounding
    np.testing.assert_allclose(out.data[1, 1], expected, rtol=0, atol=1e-3)
    assert np.all(np.diff(out.data[0, 0]) > 0)


def test_resample_rejects_wrong_axial_pitch():
    with pytest.raises(ValueError):
        resample_axial(OctaVolume(np.zeros((2, 2, 4), np.float32), 5.0, 5.0, True))


def test_rescale_surfaces_clamps():
    s = rescale_surfaces(_planes((2, 2), 10, 20, 30, 95), 0.5, 48)
    assert s.ilm[0, 0] == 5 and s.rpe[0, 0] == 47


# --------------------------------------------------------- regularization


def test_single_spike_replaced_by_plane_value():
    s = np.full((40, 40), 50.0)
    s[20, 17] = 90.0
    out = regularize_surface(s)
    assert abs(out[20, 17] - 50.0) <= 0.5
    assert np.array_equal(np.delete(out.ravel(), 20 * 40 + 17), np.delete(s.ravel(), 20 * 40 + 17))


def test_smooth_surface_untouched():
    x, y = np.meshgrid(np.arange(50), np.arange(60), indexing="ij")
    s = 40 + 5 * np.sin(x / 9.0) + 0.05 * y
    assert np.array_equal(regularize_surface(s), s)


@pytest.mark.parametrize("seed", range(5))
def test_tilted_plane_with_spikes(seed):
    rng = np.random.default_rng(seed)
    x, y = np.meshgrid(np.arange(80), np.arange(70), indexing="ij")
    plane = 30 + 0.12 * x - 0.07 * y
    s = plane.copy()
    hit = rng.random(s.shape) < 0.01
    s[hit] += rng.choice([-1, 1], hit.sum()) * rng.uniform(5, 40, hit.sum())
    out = regularize_surface(s)
    assert np.abs(out - plane).max() < 1.0


def test_outlier_floor():
    s = np.full((20, 20), 10.0)
    s[5, 5] = 11.9  # below the 2-voxel floor
    assert not outlier_mask(s).any()
    s[5, 5] = 12.5
    assert outlier_mask(s)[5, 5]


def test_regularize_errors():
    with pytest.raises(ValueError):
        regularize_surface(np.zeros((10, 10)))


def test_regularized_set_is_ordered():
    rng = np.random.default_rng(3)
    base = _planes((30, 30), 20, 40, 50, 70)
    ipl = base.ipl.copy()
    ipl[rng.random(ipl.shape) < 0.02] = 5.0
    out = regularize_surfaces(base.replace(ipl=ipl), nz=80)
    assert out.check_order()
    assert np.allclose(out.ipl, 40.0, atol=0.5)


# -------------------------------------------------------------- flattening


def test_flatten_identity_when_rpe_at_bottom():
    rng = np.random.default_rng(0)
    vol = OctaVolume(rng.random((3, 3, 20), dtype=np.float32), 3.87, 3.87, True)
    surf = _planes((3, 3), 2, 5, 9, 19)
    out, s2, shifts = flatten_on_rpe(vol, surf)
    assert np.array_equal(out.data, vol.data) and not shifts.any()
    assert np.array_equal(s2.ilm, surf.ilm)


def test_flatten_plane_shift():
    data = np.zeros((2, 2, 96), np.float32)
    data[:, :, 10] = 1.0
    vol = OctaVolume(data, 3.87, 3.87, True)
    out, s2, shifts = flatten_on_rpe(vol, _planes((2, 2), 5, 20, 30, 40))
    assert np.all(shifts == 55)
    assert np.all(out.data[:, :, 65] == 1.0) and out.data.sum() == 4
    assert np.all(s2.rpe == 95) and np.all(s2.ilm == 60)


def test_flatten_sloped_rpe():
    x, y = np.meshgrid(np.arange(30), np.arange(20), indexing="ij")
    rpe = 40 + 0.37 * x + 0.21 * y
    surf = SurfaceSet(rpe - 30, rpe - 20, rpe - 10, rpe)
    vol = OctaVolume(np.ones((30, 20, 96), np.float32), 3.87, 3.87, True)
    _, s2, _ = flatten_on_rpe(vol, surf)
    assert s2.rpe.var() < 0.25
    # surfaces keep the fractional residual
    assert np.allclose(s2.rpe - s2.ilm, 30)


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float32, (3, 2, 12), elements=st.floats(0, 10, width=32)),
    arrays(np.float64, (3, 2), elements=st.floats(0, 11.4)),
)
def test_flatten_moves_values_never_alters(data, rpe):
    vol = OctaVolume(data, 3.87, 3.87, True)
    surf = SurfaceSet(rpe * 0, rpe * 0, rpe * 0, rpe)
    out, _, shifts = flatten_on_rpe(vol, surf)
    for x in range(3):
        for y in range(2):
            s = shifts[x, y]
            kept = data[x, y, : 12 - s]
            assert np.array_equal(out.data[x, y, s:], kept)
            assert not out.data[x, y, :s].any()


def test_flatten_rejects_out_of_range_rpe():
    vol = OctaVolume(np.zeros((2, 2, 5), np.float32), 3.87, 3.87, True)
    with pytest.raises(ValueError):
        flatten_on_rpe(vol, _planes((2, 2), 0, 1, 2, 7))


# --------------------------------------------------------------- smoothing


def test_gaussian_dc_gain():
    vol = OctaVolume(np.full((20, 20, 20), 3.5, np.float32), 1, 1, True)
    out = gaussian3d(vol, 3.0)
    np.testing.assert_allclose(out.data, 3.5, rtol=1e-5)


def test_gaussian_impulse_matches_separable_kernel():
    n = 41
    data = np.zeros((n, n, n), np.float32)
    data[20, 20, 20] = 1.0
    out = gaussian3d(OctaVolume(data, 1, 1, True), 3.0).data
    k = gaussian_kernel_1d(3.0)  # closed form renormalized over +-4 sigma
    r = len(k) // 2
    expect = np.einsum("i,j,k->ijk", k, k, k)
    got = out[20 - r : 21 + r, 20 - r : 21 + r, 20 - r : 21 + r]
    sig = expect > 1e-6
    np.testing.assert_allclose(got[sig], expect[sig], rtol=1e-4)
    assert np.abs(out).sum() == pytest.approx(1.0, rel=1e-4)


def test_gaussian_mass_conservation():
    rng = np.random.default_rng(1)
    data = np.zeros((50, 50, 50), np.float32)
    data[20:30, 18:32, 22:28] = rng.random((10, 14, 6), dtype=np.float32)
    out = gaussian3d(OctaVolume(data, 1, 1, True), 3.0).data
    assert out.sum(dtype=np.float64) == pytest.approx(data.sum(dtype=np.float64), rel=1e-3)


def test_gaussian_z_range_exact():
    rng = np.random.default_rng(2)
    vol = OctaVolume(rng.random((10, 9, 60), dtype=np.float32), 1, 1, True)
    full = gaussian3d(vol, 3.0).data
    part = gaussian3d(vol, 3.0, z_range=(17, 35)).data
    np.testing.assert_array_equal(part[:, :, 17:35], full[:, :, 17:35])
    assert not part[:, :, :17].any() and not part[:, :, 35:].any()


# ------------------------------------------------------------ plexus slabs


def test_ipl_offsets():
    b = derive_plexus_bounds(_planes((2, 2), 20, 60, 90, 95), 3.87)
    assert b[0].lower[0, 0] == pytest.approx(60 - 17 / 3.87)
    assert b[1].lower[0, 0] == pytest.approx(60 + 22 / 3.87)
    assert round(b[0].lower[0, 0], 2) == 55.61 and round(b[1].lower[0, 0], 2) == 65.68


def test_slabs_partition_ilm_to_opl():
    b = derive_plexus_bounds(_planes((3, 3), 20, 60, 80, 90), 3.87)
    assert [x.plexus for x in b] == ["superficial", "intermediate", "deep"]
    assert np.all(b[0].upper == 20) and np.all(b[2].lower == 80)
    assert np.array_equal(b[0].lower, b[1].upper) and np.array_equal(b[1].lower, b[2].upper)
    assert all(np.all(x.thickness() >= 0) for x in b)


def test_ipl_minus_clamped_to_ilm():
    ilm = np.array([[20.0, 20.0]])
    ipl = np.array([[22.0, 60.0]])
    b = derive_plexus_bounds(SurfaceSet(ilm, ipl, ilm + 60, ilm + 70), 3.87)
    assert b[0].lower[0, 0] == 20.0 and b[0].thickness()[0, 0] == 0
    assert b[0].thickness()[0, 1] > 0


def test_preprocess_scan_invariants():
    rng = np.random.default_rng(4)
    nz = 96
    vol = OctaVolume(rng.random((32, 30, nz), dtype=np.float32), 5.7, 3.87)
    surf = _planes((32, 30), 20, 40, 55, 80)
    prep = preprocess_scan(vol, surf, PipelineConfig())
    assert prep.volume.dims == (32, 30, 65) and prep.volume.isotropic
    assert prep.surfaces.check_order()
    assert np.allclose(prep.surfaces.rpe, 64, atol=0.5)
    assert {"resample", "regularize", "flatten", "gaussian"} <= set(prep.stage_seconds)
