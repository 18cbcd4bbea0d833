"""Homography, warping, calibration and region-of-interest membership."""

import numpy as np
import pytest

from trafficmon.geometry import (
    MPS_TO_MPH,
    Calibration,
    Homography,
    point_in_roi,
    roi_mask,
    scale_polygon,
    warp_topdown,
)


def test_from_corners_maps_the_corners():
    src = np.array([[10.0, 5.0], [90.0, 8.0], [95.0, 70.0], [5.0, 72.0]])
    dst = np.array([[0.0, 0.0], [80.0, 0.0], [80.0, 60.0], [0.0, 60.0]])
    h = Homography.from_corners(src, dst)
    mapped = h.apply(src)
    assert np.allclose(mapped, dst, atol=1e-9)


def test_homography_inverse_round_trip():
    rng = np.random.default_rng(11)
    src = np.array([[0.0, 0.0], [100.0, 4.0], [97.0, 60.0], [3.0, 55.0]])
    dst = np.array([[0.0, 0.0], [90.0, 0.0], [90.0, 50.0], [0.0, 50.0]])
    h = Homography.from_corners(src, dst)
    hi = Homography(h.inverse)
    pts = rng.uniform(0, 90, size=(50, 2))
    back = hi.apply(h.apply(pts))
    assert np.allclose(back, pts, atol=1e-9)


def test_homography_validation():
    with pytest.raises(ValueError, match="3x3"):
        Homography(np.eye(2))
    with pytest.raises(ValueError, match="singular"):
        Homography(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        Homography.from_corners(np.zeros((3, 2)), np.zeros((4, 2)))
    # collinear points make the 8x8 system singular
    src = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    with pytest.raises(ValueError, match="degenerate"):
        Homography.from_corners(src, src)


def test_identity_warp_is_a_copy():
    px = np.arange(24, dtype=np.uint8).reshape(4, 2, 3)
    out = warp_topdown(px, Homography.identity(), 2, 4)
    assert np.array_equal(out, px)
    assert out is not px


def test_translation_warp_moves_pixels():
    px = np.zeros((8, 8, 1), dtype=np.uint8)
    px[2, 3, 0] = 200
    shift = Homography(np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]]))
    out = warp_topdown(px, shift, 8, 8)
    assert out[3, 5, 0] == 200
    assert out.sum() == 200  # everything else lands on background zeros


def test_perspective_warp_round_trip_within_one_pixel():
    rng = np.random.default_rng(12)
    src = np.array([[12.0, 3.0], [88.0, 6.0], [94.0, 58.0], [8.0, 61.0]])
    dst = np.array([[0.0, 0.0], [80.0, 0.0], [80.0, 56.0], [0.0, 56.0]])
    h = Homography.from_corners(src, dst)
    pts = rng.uniform(15, 55, size=(100, 2))
    back = Homography(h.inverse).apply(h.apply(pts))
    assert np.max(np.abs(back - pts)) < 1.0


def test_scaled_homography_commutes_with_coordinate_scaling():
    src = np.array([[10.0, 5.0], [90.0, 8.0], [95.0, 70.0], [5.0, 72.0]])
    dst = np.array([[0.0, 0.0], [80.0, 0.0], [80.0, 60.0], [0.0, 60.0]])
    h = Homography.from_corners(src, dst)
    half = h.scaled(0.5)
    pts = np.array([[40.0, 30.0], [12.0, 66.0]])
    assert np.allclose(half.apply(pts * 0.5), h.apply(pts) * 0.5, atol=1e-9)


def test_pixels_to_mph_known_value():
    calib = Calibration(meters_per_pixel=0.05, fps=15.0, lines=(100.0, 260.0))
    # 12 px per frame at 0.05 m/px and 15 fps = 9 m/s
    mph = calib.pixels_to_mph(120.0, 10)
    assert mph == pytest.approx(9.0 * MPS_TO_MPH, rel=1e-12)
    with pytest.raises(ValueError):
        calib.pixels_to_mph(10.0, 0)


def test_scaled_calibration_keeps_speeds():
    calib = Calibration(meters_per_pixel=0.05, fps=15.0, lines=(100.0, 260.0))
    half = calib.scaled(0.5)
    assert half.meters_per_pixel == pytest.approx(0.1)
    assert half.lines == (50.0, 130.0)
    # the same physical displacement reads the same speed
    assert half.pixels_to_mph(60.0, 10) == pytest.approx(calib.pixels_to_mph(120.0, 10))


def _inside_naive(x, y, poly):
    # even-odd ray cast, boundary handled by the tested helper itself
    inside = False
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        if (ay > y) != (by > y):
            xc = ax + (y - ay) * (bx - ax) / (by - ay)
            if x < xc:
                inside = not inside
    return inside


def test_point_in_roi_matches_ray_cast():
    rng = np.random.default_rng(13)
    poly = np.array([[2.0, 1.0], [11.0, 2.0], [9.0, 9.0], [5.0, 12.0], [1.0, 7.0]])
    for _ in range(300):
        x, y = rng.uniform(-2, 14, size=2)
        assert point_in_roi(x, y, poly) == _inside_naive(x, y, poly)


def test_point_in_roi_boundary_counts_inside():
    poly = np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]])
    assert point_in_roi(0.0, 2.0, poly)
    assert point_in_roi(4.0, 4.0, poly)
    assert point_in_roi(2.0, 0.0, poly)
    assert not point_in_roi(4.0001, 2.0, poly)


def test_roi_mask_matches_scalar_test():
    poly = np.array([[1.0, 1.0], [10.0, 2.0], [8.0, 8.0], [2.0, 9.0]])
    mask = roi_mask(12, 11, poly)
    for y in range(11):
        for x in range(12):
            assert mask[y, x] == point_in_roi(float(x), float(y), poly), (x, y)


def test_scale_polygon():
    poly = np.array([[2.0, 4.0], [6.0, 8.0], [1.0, 3.0]])
    assert np.allclose(scale_polygon(poly, 0.5), poly * 0.5)
