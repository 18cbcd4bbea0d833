"""Planar geometry: top-down warp, calibration and region-of-interest tests.

All detection runs in warped (top-down) pixel coordinates. A homography H
maps source pixels to warped pixels; warping inverse-maps each output pixel
and picks the nearest source pixel. Calibration converts pixel displacement
per frame step into miles per hour.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# m/s to mph; pinned so scripted truth and Eq-style estimates share one constant
MPS_TO_MPH = 2.23694


class Homography:
    """3x3 projective map from source pixels to warped pixels."""

    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if abs(np.linalg.det(m)) < 1e-12:
            raise ValueError("homography is singular")
        self.matrix = m
        self.inverse = np.linalg.inv(m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def from_corners(cls, src: np.ndarray, dst: np.ndarray) -> "Homography":
        """Solve the 8-DOF linear system from 4 point correspondences.

        ``src`` and ``dst`` are (4, 2) arrays of (x, y) pixel coordinates.
        """
        src = np.asarray(src, dtype=np.float64)
        dst = np.asarray(dst, dtype=np.float64)
        if src.shape != (4, 2) or dst.shape != (4, 2):
            raise ValueError("need exactly 4 source and 4 destination points")
        a = np.zeros((8, 8))
        b = np.zeros(8)
        for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
            a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
            a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
            b[2 * i] = u
            b[2 * i + 1] = v
        try:
            h = np.linalg.solve(a, b)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"degenerate correspondences: {exc}") from exc
        return cls(np.append(h, 1.0).reshape(3, 3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (n, 2) source points to warped coordinates."""
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        hom = np.column_stack([pts, np.ones(len(pts))]) @ self.matrix.T
        out = hom[:, :2] / hom[:, 2:3]
        return out[0] if single else out

    def scaled(self, s: float) -> "Homography":
        """The same map expressed at a resolution scaled by ``s``."""
        sm = np.diag([s, s, 1.0])
        smi = np.diag([1.0 / s, 1.0 / s, 1.0])
        return Homography(sm @ self.matrix @ smi)

    @property
    def is_identity(self) -> bool:
        return bool(np.allclose(self.matrix, np.eye(3), atol=1e-12))


def warp_topdown(pixels: np.ndarray, h: Homography, out_width: int, out_height: int) -> np.ndarray:
    """Warp a frame into top-down view, nearest-neighbor, inverse-mapped.

    Output pixels whose source falls outside the frame are 0.
    """
    if h.is_identity and pixels.shape[1] == out_width and pixels.shape[0] == out_height:
        return pixels.copy()
    xs, ys = np.meshgrid(np.arange(out_width, dtype=np.float64),
                         np.arange(out_height, dtype=np.float64))
    ones = np.ones_like(xs)
    hi = h.inverse
    sx = hi[0, 0] * xs + hi[0, 1] * ys + hi[0, 2] * ones
    sy = hi[1, 0] * xs + hi[1, 1] * ys + hi[1, 2] * ones
    sw = hi[2, 0] * xs + hi[2, 1] * ys + hi[2, 2] * ones
    sx = np.floor(sx / sw + 0.5).astype(np.int64)
    sy = np.floor(sy / sw + 0.5).astype(np.int64)
    hgt, wid = pixels.shape[:2]
    ok = (sx >= 0) & (sx < wid) & (sy >= 0) & (sy < hgt)
    out = np.zeros((out_height, out_width) + pixels.shape[2:], dtype=pixels.dtype)
    out[ok] = pixels[sy[ok], sx[ok]]
    return out


@dataclass(frozen=True, slots=True)
class Calibration:
    """Scale and timing for speed estimation in warped coordinates.

    ``lines`` are the two referential rows (pixels); a trajectory's speed is
    averaged between the frames at which its centroid crosses them.
    """

    meters_per_pixel: float
    fps: float
    lines: tuple[float, float]

    def __post_init__(self) -> None:
        if self.meters_per_pixel <= 0:
            raise ValueError("meters_per_pixel must be positive")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    def pixels_to_mph(self, total_displacement_px: float, steps: int) -> float:
        """Mean speed over ``steps`` frame steps covering the displacement."""
        if steps <= 0:
            raise ValueError("steps must be positive")
        mps = total_displacement_px * self.meters_per_pixel / (steps * self.dt)
        return mps * MPS_TO_MPH

    def scaled(self, s: float) -> "Calibration":
        """Calibration at a resolution scaled by ``s`` (0.5 = half size)."""
        return Calibration(
            meters_per_pixel=self.meters_per_pixel / s,
            fps=self.fps,
            lines=(self.lines[0] * s, self.lines[1] * s),
        )


def _on_boundary(x: float, y: float, poly: np.ndarray, eps: float = 1e-9) -> bool:
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
        if abs(cross) > eps * max(1.0, abs(bx - ax) + abs(by - ay)):
            continue
        if min(ax, bx) - eps <= x <= max(ax, bx) + eps and min(ay, by) - eps <= y <= max(ay, by) + eps:
            return True
    return False


def point_in_roi(x: float, y: float, polygon: np.ndarray) -> bool:
    """Even-odd membership test; points on the boundary count as inside."""
    poly = np.asarray(polygon, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
        raise ValueError("polygon must be (n>=3, 2)")
    if _on_boundary(x, y, poly):
        return True
    inside = False
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        if (ay > y) != (by > y):
            xcross = ax + (y - ay) * (bx - ax) / (by - ay)
            if x < xcross:
                inside = not inside
    return inside


def roi_mask(width: int, height: int, polygon: np.ndarray) -> np.ndarray:
    """Rasterized even-odd membership for every pixel center, boundary inside."""
    poly = np.asarray(polygon, dtype=np.float64)
    xs = np.arange(width, dtype=np.float64)[None, :]
    ys = np.arange(height, dtype=np.float64)[:, None]
    inside = np.zeros((height, width), dtype=bool)
    boundary = np.zeros((height, width), dtype=bool)
    n = len(poly)
    eps = 1e-9
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        # even-odd ray cast toward +x
        straddles = (ay > ys) != (by > ys)
        if by != ay:
            xcross = ax + (ys - ay) * (bx - ax) / (by - ay)
            inside ^= straddles & (xs < xcross)
        # boundary band
        cross = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
        scale = eps * max(1.0, abs(bx - ax) + abs(by - ay))
        within = (
            (np.abs(cross) <= scale)
            & (xs >= min(ax, bx) - eps) & (xs <= max(ax, bx) + eps)
            & (ys >= min(ay, by) - eps) & (ys <= max(ay, by) + eps)
        )
        boundary |= within
    return inside | boundary


def scale_polygon(polygon: np.ndarray, s: float) -> np.ndarray:
    return np.asarray(polygon, dtype=np.float64) * s
