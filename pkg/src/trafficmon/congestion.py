"""Stopped-vehicle congestion detection from the two foreground masks.

A pixel counts as temporarily stopped when the retaining model still says
foreground while the absorbing model has folded it into background. The
stopped area inside the ROI drives a frame counter with unit hysteresis:
above the area threshold it climbs, otherwise it falls (floored at 0),
and the verdict turns true once the counter passes the time threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CongestionParams:
    tau_a: int            # stopped-area threshold, pixels
    tau_t: int            # dwell threshold, frames

    @staticmethod
    def default_tau_t(fps: float) -> int:
        return int(round(10.0 * fps))


@dataclass(frozen=True)
class CongestionVerdict:
    frame: int
    area_px: int
    t_c: int
    congested: bool


def calibrate_tau_a(vehicle_width_m: float, vehicle_length_m: float,
                    meters_per_pixel: float, vehicles: int = 3) -> int:
    """Area threshold proxy for the stopped-vehicle count definition."""
    area = (vehicle_width_m / meters_per_pixel) * (vehicle_length_m / meters_per_pixel)
    return int(round(vehicles * area))


def stopped_area(mask_gfm: np.ndarray, mask_ziv: np.ndarray,
                 roi_mask: np.ndarray) -> int:
    if mask_gfm.shape != mask_ziv.shape or mask_gfm.shape != roi_mask.shape:
        raise ValueError(
            f"mask shapes differ: {mask_gfm.shape} vs {mask_ziv.shape} vs {roi_mask.shape}"
        )
    return int(np.count_nonzero(mask_gfm & ~mask_ziv & roi_mask))


class CongestionDetector:
    def __init__(self, params: CongestionParams, roi_mask: np.ndarray):
        self.params = params
        self.roi_mask = roi_mask
        self.t_c = 0
        self.verdicts: list[CongestionVerdict] = []
        self._frame = -1

    def step(self, mask_gfm: np.ndarray, mask_ziv: np.ndarray,
             frame: int | None = None) -> CongestionVerdict:
        self._frame = self._frame + 1 if frame is None else frame
        area = stopped_area(mask_gfm, mask_ziv, self.roi_mask)
        if area > self.params.tau_a:
            self.t_c += 1
        elif self.t_c > 0:
            self.t_c -= 1
        v = CongestionVerdict(
            frame=self._frame, area_px=area, t_c=self.t_c,
            congested=self.t_c > self.params.tau_t,
        )
        self.verdicts.append(v)
        return v


def detect_congestion(mask_pairs, roi_mask: np.ndarray,
                      params: CongestionParams) -> list[CongestionVerdict]:
    """Fold the counter over (frame, gfm_mask, ziv_mask) triples in order."""
    det = CongestionDetector(params, roi_mask)
    last = -1
    for frame, mg, mz in mask_pairs:
        if frame <= last:
            raise ValueError(f"mask streams out of sync at frame {frame}")
        last = frame
        det.step(mg, mz, frame=frame)
    return det.verdicts


def write_verdict_csv(verdicts: list[CongestionVerdict], path) -> None:
    with open(path, "w") as fh:
        fh.write("frame,area_px,T_c,congested\n")
        for v in verdicts:
            fh.write(f"{v.frame},{v.area_px},{v.t_c},{int(v.congested)}\n")
