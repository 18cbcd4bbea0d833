"""Synthetic road scenes with scripted vehicles, weather, and ground truth.

A scene is fully determined by its script: vehicles follow a lane (constant
x, increasing y) with piecewise-constant speed, so per-frame positions, true
mean speeds between the referential lines, and the congestion flag are all
known exactly. Weather is a seeded post-process on rendered frames.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import MPS_TO_MPH, point_in_roi
from .video import Frame, VideoSpec

log = logging.getLogger(__name__)

ROAD_GRAY = (92, 92, 96)
SHOULDER_GRAY = (58, 60, 58)


class SceneError(ValueError):
    """Raised when a script cannot be rendered as specified."""


@dataclass(frozen=True, slots=True)
class VehicleSpec:
    """One scripted vehicle driving down a lane (+y direction).

    ``speeds`` is a list of (duration_s, speed_mps) segments starting at
    ``spawn_s``; after the last segment the final speed holds until the
    vehicle reaches ``y_end_m`` and leaves the scene.
    """

    spawn_s: float
    lane_x_m: float
    y_start_m: float
    y_end_m: float
    speeds: tuple[tuple[float, float], ...]
    width_m: float = 1.8
    length_m: float = 4.2
    # default body color keeps a wide luminance gap from the road gray so
    # intensity-only processing sees the same vehicles the RGB path does,
    # even against a freshly initialized (high-variance) background model
    color: tuple[int, int, int] = (228, 101, 82)


@dataclass(frozen=True, slots=True)
class SceneScript:
    """Everything needed to render a scene and derive its ground truth."""

    duration_s: float
    meters_per_pixel: float
    vehicles: tuple[VehicleSpec, ...]
    referential_lines: tuple[float, float]  # pixel rows in warped coordinates
    roi: np.ndarray  # (n, 2) pixel polygon
    road_x_range_m: tuple[float, float] = (0.0, 1e9)
    stop_seconds: float = 10.0  # dwell before stopped vehicles count as congestion


@dataclass(frozen=True, slots=True)
class WeatherModel:
    """Seeded frame degradation. ``kind`` is sunny, rainy or snowy.

    ``density`` is the exact fraction of pixels overwritten by specks or
    streaks (before blur): floor(density * W * H) pixels are modified.
    """

    kind: str = "sunny"
    density: float = 0.0
    element_px: tuple[int, int] = (1, 1)  # (height, width) of one speck/streak
    blur_radius: int = 0
    illumination: float = 1.0
    brightness: tuple[int, int] = (235, 255)

    def __post_init__(self) -> None:
        if self.kind not in ("sunny", "rainy", "snowy"):
            raise ValueError(f"unknown weather kind {self.kind!r}")
        if not 0.0 <= self.density < 1.0:
            raise ValueError("density must be in [0, 1)")


SUNNY = WeatherModel("sunny")
RAINY = WeatherModel("rainy", density=0.006, element_px=(7, 1), blur_radius=1,
                     illumination=0.97, brightness=(150, 190))
SNOWY = WeatherModel("snowy", density=0.035, element_px=(2, 2), blur_radius=2,
                     illumination=0.86, brightness=(225, 255))

WEATHER_PRESETS = {"sunny": SUNNY, "rainy": RAINY, "snowy": SNOWY}


@dataclass(slots=True)
class VehicleTruth:
    """Scripted truth for one vehicle, in warped pixel coordinates."""

    index: int
    spawn_s: float
    lane_x_px: float
    first_frame: int
    last_frame: int
    cross_frames: tuple[int, int] | None  # frames of the two line crossings
    mean_mph: float | None  # scripted speed averaged between the crossings


@dataclass(slots=True)
class GroundTruth:
    """Per-frame and per-vehicle truth derived from the script."""

    flags: np.ndarray  # (n,) bool congestion flag
    stopped_counts: np.ndarray  # (n,) int vehicles with zero speed inside ROI
    positions: np.ndarray  # (n, n_vehicles, 2) float centroid px, NaN inactive
    speeds_mps: np.ndarray  # (n, n_vehicles) float, NaN inactive
    vehicles: list[VehicleTruth]

    @property
    def n_frames(self) -> int:
        return len(self.flags)


def _motion_profile(v: VehicleSpec, horizon_s: float):
    """Breakpoints (t, y_m) of the piecewise-linear position, plus speed lookup."""
    ts = [v.spawn_s]
    ys = [v.y_start_m]
    vs = []
    for dur, spd in v.speeds:
        if dur < 0 or spd < 0:
            raise SceneError(f"negative duration or speed in vehicle at lane {v.lane_x_m}")
        ts.append(ts[-1] + dur)
        ys.append(ys[-1] + dur * spd)
        vs.append(spd)
    # final speed holds to the end of the video
    tail = max(horizon_s + 1.0 - ts[-1], 0.0)
    ts.append(ts[-1] + tail)
    ys.append(ys[-1] + tail * vs[-1] if vs else ys[-1])
    vs.append(vs[-1] if vs else 0.0)
    return np.array(ts), np.array(ys), np.array(vs)


def _crossing_frame(ys: np.ndarray, row: float) -> int | None:
    """First index at which the y series reaches the line, given its start side."""
    if len(ys) == 0 or math.isnan(ys[0]):
        return None
    s0 = np.sign(ys[0] - row)
    if s0 == 0:
        return 0
    hits = np.nonzero(np.sign(ys - row) != s0)[0]
    return int(hits[0]) if len(hits) else None


def ground_truth(script: SceneScript, spec: VideoSpec) -> GroundTruth:
    """Derive per-frame positions, speeds, crossings and the congestion flag."""
    n = int(round(script.duration_s * spec.fps))
    mpp = script.meters_per_pixel
    nveh = len(script.vehicles)
    t = np.arange(n) / spec.fps
    positions = np.full((n, nveh, 2), np.nan)
    speeds = np.full((n, nveh), np.nan)
    truths: list[VehicleTruth] = []
    for vi, veh in enumerate(script.vehicles):
        ts, ys, vs = _motion_profile(veh, script.duration_s)
        y_m = np.interp(t, ts, ys)
        active = (t >= veh.spawn_s) & (y_m <= veh.y_end_m)
        if not active.any():
            truths.append(VehicleTruth(vi, veh.spawn_s, veh.lane_x_m / mpp, -1, -1, None, None))
            continue
        seg = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(vs) - 1)
        v_t = vs[seg]
        positions[active, vi, 0] = veh.lane_x_m / mpp
        positions[active, vi, 1] = y_m[active] / mpp
        speeds[active, vi] = v_t[active]
        frames_active = np.nonzero(active)[0]
        f0, f1 = int(frames_active[0]), int(frames_active[-1])
        ys_px = positions[:, vi, 1]
        r1, r2 = script.referential_lines
        k1 = _crossing_frame(ys_px[f0 : f1 + 1], r1)
        k2 = _crossing_frame(ys_px[f0 : f1 + 1], r2)
        cross = None
        mean_mph = None
        if k1 is not None and k2 is not None:
            a, b = sorted((k1 + f0, k2 + f0))
            cross = (a, b)
            if b > a:
                mean_mph = float(np.mean(speeds[a : b + 1, vi])) * MPS_TO_MPH
        truths.append(VehicleTruth(vi, veh.spawn_s, veh.lane_x_m / mpp, f0, f1, cross, mean_mph))

    # congestion: >3 vehicles at zero scripted speed inside the ROI, dwell > stop_seconds
    stopped = np.zeros(n, dtype=np.int16)
    for vi in range(nveh):
        zero = speeds[:, vi] == 0.0
        if not zero.any():
            continue
        for k in np.nonzero(zero)[0]:
            if point_in_roi(positions[k, vi, 0], positions[k, vi, 1], script.roi):
                stopped[k] += 1
    flags = np.zeros(n, dtype=bool)
    dwell_frames = int(round(script.stop_seconds * spec.fps))
    run = 0
    for k in range(n):
        run = run + 1 if stopped[k] >= 4 else 0
        flags[k] = run > dwell_frames
    return GroundTruth(flags, stopped, positions, speeds, truths)


def _vehicle_rect(veh: VehicleSpec, cx_px: float, cy_px: float, mpp: float):
    w = int(round(veh.width_m / mpp))
    h = int(round(veh.length_m / mpp))
    x0 = int(math.floor(cx_px - w / 2.0 + 0.5))
    y0 = int(math.floor(cy_px - h / 2.0 + 0.5))
    return x0, y0, x0 + w, y0 + h


def render_background(script: SceneScript, spec: VideoSpec) -> np.ndarray:
    bg = np.empty((spec.height, spec.width, 3), dtype=np.uint8)
    bg[:, :] = SHOULDER_GRAY
    x0 = max(int(script.road_x_range_m[0] / script.meters_per_pixel), 0)
    x1 = min(int(math.ceil(script.road_x_range_m[1] / script.meters_per_pixel)), spec.width)
    bg[:, x0:x1] = ROAD_GRAY
    return bg


def generate_scene(
    script: SceneScript,
    spec: VideoSpec,
    weather: WeatherModel | None = None,
    seed: int = 0,
) -> tuple[list[Frame], GroundTruth]:
    """Render the script to frames (RGB, source resolution) plus ground truth.

    Rejects scripts whose vehicles would leave the frame sideways or extend
    past the top/bottom edge while still active.
    """
    truth = ground_truth(script, spec)
    n = truth.n_frames
    mpp = script.meters_per_pixel
    bg = render_background(script, spec)
    frames: list[Frame] = []
    for k in range(n):
        px = bg.copy()
        for vi, veh in enumerate(script.vehicles):
            cx, cy = truth.positions[k, vi]
            if math.isnan(cx):
                continue
            x0, y0, x1, y1 = _vehicle_rect(veh, cx, cy, mpp)
            if x0 < 0 or x1 > spec.width or y0 < 0 or y1 > spec.height:
                raise SceneError(
                    f"vehicle {vi} leaves the frame at t={k / spec.fps:.2f}s "
                    f"(rect {x0},{y0},{x1},{y1} vs {spec.width}x{spec.height})"
                )
            px[y0:y1, x0:x1] = veh.color
        frame = Frame(index=k, t=k / spec.fps, pixels=px)
        if weather is not None and weather.kind != "sunny":
            frame = apply_weather(frame, weather, seed)
        frames.append(frame)
    return frames, truth


# -- weather -----------------------------------------------------------------

def _rng_for(seed: int, kind: str, frame_index: int) -> np.random.Generator:
    code = {"sunny": 0, "rainy": 1, "snowy": 2}[kind]
    return np.random.default_rng((seed, code, frame_index))


def overlay_elements(pixels: np.ndarray, model: WeatherModel, rng: np.random.Generator) -> np.ndarray:
    """Overwrite exactly floor(density*W*H) pixels with bright elements.

    Elements are placed on a disjoint grid of element-sized cells, so the
    modified pixel count is exact; the last element may be partial.
    """
    h, w = pixels.shape[:2]
    budget = int(model.density * w * h)
    if budget == 0:
        return pixels
    eh, ew = model.element_px
    cell = eh * ew
    gh, gw = h // eh, w // ew
    n_full, rem = divmod(budget, cell)
    n_cells = n_full + (1 if rem else 0)
    if n_cells > gh * gw:
        raise SceneError("weather density too high for element size")
    out = pixels.copy()
    cells = rng.choice(gh * gw, size=n_cells, replace=False)
    levels = rng.integers(model.brightness[0], model.brightness[1] + 1, size=n_cells)
    for idx, (c, lvl) in enumerate(zip(cells, levels)):
        cy, cx = divmod(int(c), gw)
        y0, x0 = cy * eh, cx * ew
        if idx == n_full:  # partial element carrying the remainder
            flat = np.arange(rem)
            yy, xx = np.divmod(flat, ew)
            out[y0 + yy, x0 + xx] = lvl
        else:
            out[y0 : y0 + eh, x0 : x0 + ew] = lvl
    return out


def box_blur(pixels: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return pixels
    size = 2 * radius + 1
    blurred = np.empty_like(pixels)
    for c in range(pixels.shape[2]):
        f = ndimage.uniform_filter(pixels[:, :, c].astype(np.float64), size=size, mode="nearest")
        blurred[:, :, c] = np.rint(f).astype(np.uint8)
    return blurred


def apply_weather(frame: Frame, model: WeatherModel, seed: int) -> Frame:
    """Degrade one frame; same frame + same seed gives bit-identical output."""
    px = frame.pixels
    if model.illumination != 1.0:
        px = np.clip(np.rint(px.astype(np.float64) * model.illumination), 0, 255).astype(np.uint8)
    if model.density > 0.0:
        px = overlay_elements(px, model, _rng_for(seed, model.kind, frame.index))
    if model.blur_radius > 0:
        px = box_blur(px, model.blur_radius)
    if px is frame.pixels:
        px = px.copy()
    return Frame(index=frame.index, t=frame.t, pixels=px)
