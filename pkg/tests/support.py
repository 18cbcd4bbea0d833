"""Builders shared by the unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from trafficmon import experiment as exp
from trafficmon.pixelmodels import BackgroundMixture, GlobalForegroundModel
from trafficmon.scene import SceneScript, VehicleSpec


def random_background(rng, h, w, d, params) -> BackgroundMixture:
    """A live-looking per-pixel mixture: sorted weights, floored variances,
    a sprinkle of empty pixels."""
    bg = BackgroundMixture(h, w, d, params)
    counts = rng.integers(1, params.k + 1, size=(h, w))
    counts.flat[rng.choice(h * w, size=max(1, h * w // 50), replace=False)] = 0
    bg.counts[...] = counts.astype(np.uint8)
    for i in range(h):
        for j in range(w):
            c = int(bg.counts[i, j])
            if c == 0:
                continue
            ws = np.sort(rng.dirichlet(np.ones(c)))[::-1]
            bg.weights[i, j, :c] = ws.astype(np.float32)
            bg.means[i, j, :c] = rng.uniform(0, 255, size=(c, d)).astype(np.float32)
            bg.variances[i, j, :c] = rng.uniform(
                params.variance_floor, 400.0, size=(c, d)).astype(np.float32)
    return bg


def random_global(rng, d, params) -> GlobalForegroundModel:
    """A live-looking global model; logdet kept consistent with the stored
    float32 variances, the way the update keeps it."""
    g = GlobalForegroundModel(d, params)
    g.count = int(rng.integers(0, params.capacity + 1))
    if g.count:
        g.weights[: g.count] = rng.dirichlet(np.ones(g.count)).astype(np.float32)
        g.means[: g.count] = rng.uniform(0, 255, size=(g.count, d)).astype(np.float32)
        g.variances[: g.count] = rng.uniform(
            params.variance_floor, 400.0, size=(g.count, d)).astype(np.float32)
        for l in range(g.count):
            g.logdet[l] = sum(float(np.log(np.float64(v)))
                              for v in g.variances[l])
    return g


def straight_script(vehicles, duration_s: float,
                    stop_seconds: float = 10.0) -> SceneScript:
    """A scene script on the standard site geometry."""
    return SceneScript(
        duration_s=duration_s,
        meters_per_pixel=exp.METERS_PER_PIXEL,
        vehicles=tuple(vehicles),
        referential_lines=exp.REFERENTIAL_LINES_PX,
        roi=np.array(exp.ROI_PX),
        road_x_range_m=exp.ROAD_X_RANGE_M,
        stop_seconds=stop_seconds,
    )


def through_vehicle(spawn_s: float, lane: int, mps: float,
                    color=None) -> VehicleSpec:
    """One vehicle crossing the whole scene at constant speed (the last
    scripted speed holds until the vehicle leaves)."""
    kw = {} if color is None else {"color": color}
    return VehicleSpec(
        spawn_s=spawn_s,
        lane_x_m=exp.LANES_X_M[lane],
        y_start_m=exp.Y_START_M,
        y_end_m=exp.Y_END_M,
        speeds=((1.0, mps),),
        **kw,
    )


def stopping_vehicle(arrive_s: float, stop_dur_s: float, lane: int,
                     cruise: float = 9.0, resume: bool = True,
                     color=None) -> VehicleSpec:
    """One vehicle that halts at the stop point at ``arrive_s`` for
    ``stop_dur_s`` seconds, then (by default) drives off."""
    travel = (exp.STOP_Y_M - exp.Y_START_M) / cruise
    segs = [(travel, cruise), (round(stop_dur_s, 3), 0.0)]
    if resume:
        segs.append((1.0, cruise))
    kw = {} if color is None else {"color": color}
    return VehicleSpec(
        spawn_s=round(arrive_s - travel, 3),
        lane_x_m=exp.LANES_X_M[lane],
        y_start_m=exp.Y_START_M,
        y_end_m=exp.Y_END_M,
        speeds=tuple(segs),
        **kw,
    )


def stop_episode(arrive_s: float, dwell_s: float,
                 lanes=(0, 1, 2, 3)) -> list[VehicleSpec]:
    """Four staggered stoppers, all simultaneously still for ``dwell_s``
    seconds starting at ``arrive_s + 1.5``, departing staggered after."""
    out = []
    for i, lane in enumerate(lanes):
        stop_dur = (1.5 - 0.5 * i) + dwell_s + 0.4 * i
        out.append(stopping_vehicle(
            arrive_s + 0.5 * i, stop_dur, lane,
            color=exp.VEHICLE_COLORS[i % len(exp.VEHICLE_COLORS)]))
    return out
