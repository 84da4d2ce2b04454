import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from omnisal import sphere
from omnisal.sphere import SphericalCoord, ViewportLayout

from conftest import smooth_pattern, tangent_oracle


# ------------------------------------------------------------ coordinates --


def test_erp_pixel_center_convention():
    lat, lon = sphere.erp_pixel_centers(4, 8)
    np.testing.assert_allclose(lat, [math.pi / 2 - math.pi * (i + 0.5) / 4 for i in range(4)])
    np.testing.assert_allclose(lon, [-math.pi + 2 * math.pi * (j + 0.5) / 8 for j in range(8)])


def test_canonical_coordinates():
    c = SphericalCoord.from_degrees(10.0, 370.0).canonical()
    assert c.degrees() == pytest.approx((10.0, 10.0))
    assert SphericalCoord(0.0, math.pi).canonical().lon == pytest.approx(-math.pi)


@given(st.floats(-1.5, 1.5), st.floats(-20, 20))
def test_unit_vector_roundtrip(lat, lon):
    lat2, lon2 = sphere.from_unit(sphere.to_unit(lat, lon))
    assert lat2 == pytest.approx(lat, abs=1e-12)
    assert math.cos(lon2 - lon) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- layouts --


def test_default_layout_shape():
    lay = sphere.default_layout()
    assert len(lay) == 18 and lay.fov_deg == 80.0 and lay.patch_size == 224
    lats = sorted({round(c.degrees()[0], 9) for c in lay.centers})
    assert lats == [-67.5, -22.5, 22.5, 67.5]
    pairs = {tuple(np.round(c.degrees(), 9)) for c in lay.centers}
    assert len(pairs) == 18
    for c in lay.centers:
        assert -math.pi <= c.lon < math.pi


def test_augmented_layouts():
    base = sphere.default_layout()
    shifted = sphere.augmented_layout("shifted")
    assert len(shifted) == 18 and shifted.fov_deg == 80.0
    for a, b in zip(base.centers, shifted.centers):
        d = math.degrees(b.lon - a.lon) % 360.0
        assert d == pytest.approx(45.0)
        assert a.lat == b.lat
    wide = sphere.augmented_layout("wide_fov")
    assert wide.centers == base.centers and wide.fov_deg == 120.0
    coarse = sphere.augmented_layout("coarse")
    assert len(coarse) == 10 and coarse.fov_deg == 120.0
    rings = [round(c.degrees()[0]) for c in coarse.centers]
    assert [rings.count(v) for v in (-60, 0, 60)] == [3, 4, 3]
    with pytest.raises(ValueError):
        sphere.augmented_layout("spiral")


def test_layout_json_roundtrip_and_unknown_keys():
    lay = sphere.augmented_layout("coarse", patch_size=32)
    again = ViewportLayout.from_json(lay.to_json())
    assert again.fov_deg == lay.fov_deg and again.patch_size == 32
    np.testing.assert_allclose(np.array(again.centers), np.array(lay.centers), atol=1e-12)
    d = json.loads(lay.to_json())
    d["extra"] = 1
    with pytest.raises(ValueError):
        ViewportLayout.from_dict(d)


def test_layout_validation():
    with pytest.raises(ValueError):
        ViewportLayout((SphericalCoord(0, 0),), fov_deg=180.0)
    with pytest.raises(ValueError):
        ViewportLayout((SphericalCoord(0, 0),), fov_deg=0.0)


# --------------------------------------------------------------- gnomonic --


def test_point_forward_center_is_origin():
    c = SphericalCoord.from_degrees(33.0, -71.0)
    assert sphere.gnomonic_point_forward(c, c) == pytest.approx((0.0, 0.0), abs=1e-15)


@pytest.mark.parametrize(
    "args, expected",
    [
        # frozen from a 30-digit evaluation of the east/north basis projection
        ((0, 0, 0, 10), (0.17632698070846497347, 0.0)),
        ((30, 40, 35, 50), (0.14434927347396954723, 0.094759986912980523537)),
        ((-67.5, 120, -50, 170), (0.56869528254378154265, 0.10229533845474792559)),
        ((10, 179, -5, -170), (0.20053034265889072352, -0.26969143740348743845)),
    ],
)
def test_point_forward_frozen_values(args, expected):
    lat0, lon0, lat, lon = args
    x, y = sphere.gnomonic_point_forward(SphericalCoord.from_degrees(lat0, lon0),
                                         SphericalCoord.from_degrees(lat, lon))
    assert x == pytest.approx(expected[0], abs=1e-14)
    assert y == pytest.approx(expected[1], abs=1e-14)


def test_equator_closed_form():
    x, y = sphere.gnomonic_point_forward(SphericalCoord(0, 0), SphericalCoord.from_degrees(0, 10))
    assert x == pytest.approx(math.tan(math.radians(10)), abs=1e-15) and y == 0.0


@pytest.mark.parametrize("q", [(0.0, 90.0), (0.0, 135.0), (-90.0, 0.0)])
def test_point_forward_rejects_far_side(q):
    with pytest.raises(ValueError):
        sphere.gnomonic_point_forward(SphericalCoord(0, 0), SphericalCoord.from_degrees(*q))


def test_forward_matches_basis_oracle(rng):
    for _ in range(200):
        lat0, lat = rng.uniform(-1.5, 1.5, 2)
        lon0, lon = rng.uniform(-math.pi, math.pi, 2)
        x, y, d = tangent_oracle(lat0, lon0, lat, lon)
        if d <= 0.05:
            continue
        got = sphere.gnomonic_forward(lat0, lon0, lat, lon)
        assert got[0] == pytest.approx(x, rel=1e-10, abs=1e-12)
        assert got[1] == pytest.approx(y, rel=1e-10, abs=1e-12)


def test_point_roundtrip_10k_pairs(rng):
    """Inverse then forward reconstructs points to < 1e-12 rad."""
    n = 10_000
    lat0 = rng.uniform(-math.pi / 2, math.pi / 2, n)
    lon0 = rng.uniform(-math.pi, math.pi, n)
    # points within 40 deg of the center
    x = rng.uniform(-0.8, 0.8, n)
    y = rng.uniform(-0.8, 0.8, n)
    lat, lon = sphere.gnomonic_inverse(lat0, lon0, x, y)
    x2, y2, _ = sphere.gnomonic_forward(lat0, lon0, lat, lon)
    lat2, lon2 = sphere.gnomonic_inverse(lat0, lon0, x2, y2)
    err = sphere.angular_distance(sphere.to_unit(lat, lon), sphere.to_unit(lat2, lon2))
    assert err.max() < 1e-12


@given(st.floats(-1.5, 1.5), st.floats(-3.1, 3.1), st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
def test_inverse_then_forward_is_identity(lat0, lon0, x, y):
    lat, lon = sphere.gnomonic_inverse(lat0, lon0, x, y)
    x2, y2, cosc = sphere.gnomonic_forward(lat0, lon0, lat, lon)
    assert cosc > 0
    assert x2 == pytest.approx(x, abs=1e-9) and y2 == pytest.approx(y, abs=1e-9)


def test_tangent_grid_spans_fov():
    x, y = sphere.tangent_plane_grid(80.0, 4)
    t = math.tan(math.radians(40))
    np.testing.assert_allclose(x[0], [-0.75 * t, -0.25 * t, 0.25 * t, 0.75 * t])
    np.testing.assert_allclose(y[:, 0], [0.75 * t, 0.25 * t, -0.25 * t, -0.75 * t])


# ----------------------------------------------------------- sampling map --


def brute_force_coverage(layout, h):
    lat, lon = sphere.erp_pixel_centers(h, 2 * h)
    count = np.zeros((h, 2 * h), dtype=np.int64)
    t = math.tan(math.radians(layout.fov_deg) / 2)
    for i in range(h):
        for j in range(2 * h):
            for c in layout.centers:
                x, y, d = tangent_oracle(c.lat, c.lon, lat[i], lon[j])
                count[i, j] += d > 0 and abs(x) <= t and abs(y) <= t
    return count


@pytest.mark.parametrize("name", ["default", "shifted", "wide-fov", "coarse"])
def test_coverage_equals_brute_force(name):
    lay = sphere.layout_by_name(name, patch_size=16)
    smap = sphere.build_sampling_map(lay, 16, 32)
    np.testing.assert_array_equal(smap.coverage, brute_force_coverage(lay, 16))
    np.testing.assert_array_equal(sphere.overlap_mask(lay, 16, 32), smap.coverage)


def test_default_overlap_max_four_and_complete():
    for h in (64, 128):
        mask = sphere.overlap_mask(sphere.default_layout(), h, 2 * h)
        assert mask.max() == 4
        assert (mask == 0).sum() == 0


def test_single_viewport_coverage_binary():
    lay = ViewportLayout((SphericalCoord.from_degrees(20, 50),), 80.0, 16)
    assert set(np.unique(sphere.overlap_mask(lay, 32, 64))) == {0.0, 1.0}


def test_empty_layout_mask_is_zero():
    assert not sphere.overlap_mask(ViewportLayout(()), 8, 16).any()


def test_sampling_map_rejects_bad_shape():
    with pytest.raises(ValueError):
        sphere.build_sampling_map(sphere.default_layout(), 10, 30)


def test_projection_shapes_and_constant():
    lay = sphere.default_layout()
    smap = sphere.build_sampling_map(lay, 128, 256)
    frame = np.full((128, 256, 3), 0.25)
    patches = sphere.project_to_tangents(frame, smap)
    assert patches.shape == (18, 224, 224, 3)
    assert np.all(patches == 0.25)
    with pytest.raises(ValueError):
        sphere.project_to_tangents(np.zeros((64, 128)), smap)


def test_patch_center_matches_erp_value():
    h = 128
    erp = smooth_pattern(h)
    lay = sphere.default_layout(patch_size=32)
    patches = sphere.project_to_tangents(erp, sphere.build_sampling_map(lay, h, 2 * h))
    for t, c in enumerate(lay.centers):
        center = patches[t, 15:17, 15:17].mean()
        exact = 0.5 + 0.3 * math.cos(c.lat) * math.cos(c.lon) + 0.2 * math.sin(c.lat) \
            + 0.1 * math.cos(c.lat) * math.sin(c.lon)
        assert center == pytest.approx(exact, abs=5e-3)


def test_backproject_restores_constant_exactly():
    lay = sphere.default_layout(patch_size=48)
    smap = sphere.build_sampling_map(lay, 64, 128)
    erp = np.full((64, 128), 0.7)
    back, weight = sphere.back_project(sphere.project_to_tangents(erp, smap), smap)
    covered = weight > 0
    assert covered.all()
    np.testing.assert_array_equal(back[covered], 0.7)
    assert back.mean() == erp.mean()


def test_roundtrip_smooth_pattern_under_one_percent():
    erp = smooth_pattern(128)
    smap = sphere.build_sampling_map(sphere.default_layout(), 128, 256)
    back, _ = sphere.back_project(sphere.project_to_tangents(erp, smap), smap)
    assert np.abs(back - erp).mean() < 0.01 * (erp.max() - erp.min())


@pytest.mark.parametrize("weighting", ["uniform", "cosine"])
def test_backprojection_matrix_agrees_with_loop(weighting):
    lay = sphere.augmented_layout("coarse", patch_size=12)
    smap = sphere.build_sampling_map(lay, 16, 32)
    patches = np.random.default_rng(0).random((10, 12, 12))
    back, _ = sphere.back_project(patches, smap, weighting=weighting)
    via = smap.backprojection_matrix(weighting) @ patches.reshape(-1)
    np.testing.assert_allclose(via.reshape(16, 32), back, atol=1e-13)
    proj = smap.projection_matrix @ smooth_pattern(16).reshape(-1)
    np.testing.assert_allclose(proj.reshape(10, 12, 12),
                               sphere.project_to_tangents(smooth_pattern(16), smap), atol=1e-13)


def test_longitude_wrap_gives_identical_patches():
    """Layout centers offset by 360 deg project identically."""
    lay = sphere.default_layout(patch_size=16)
    lay360 = ViewportLayout(tuple(SphericalCoord(c.lat, c.lon + 2 * math.pi) for c in lay.centers),
                            lay.fov_deg, lay.patch_size)
    erp = smooth_pattern(32)
    a = sphere.project_to_tangents(erp, sphere.build_sampling_map(lay, 32, 64))
    b = sphere.project_to_tangents(erp, sphere.build_sampling_map(lay360, 32, 64))
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("shift", [1, 5, 16])
def test_rotational_covariance_exact_on_pixel_pitch(shift):
    h = 32
    w = 2 * h
    erp = np.random.default_rng(shift).random((h, w))
    lay = sphere.default_layout(patch_size=16)
    rolled = np.roll(erp, shift, axis=1)
    dlon = 2 * math.pi * shift / w
    a = sphere.project_to_tangents(erp, sphere.build_sampling_map(lay, h, w))
    b = sphere.project_to_tangents(rolled, sphere.build_sampling_map(lay.rotated(dlon), h, w))
    np.testing.assert_allclose(a, b, atol=1e-9)
