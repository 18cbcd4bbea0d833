"""Blob labeling, trajectory linking, and per-vehicle speed estimation.

Speeds are measured between two referential lines in the warped view:
the mean per-step centroid displacement over that window, converted to
mph through the calibration. The step counter is the consumer's own
frame counter, so a stream with silently dropped frames (no timestamp
adjustment) yields proportionally inflated speeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import Calibration


@dataclass(frozen=True)
class Blob:
    label: int
    area: int
    cx: float
    cy: float
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive
    frame: int


@dataclass(frozen=True)
class LinkerParams:
    """Defaults sized for 320x180 masks; scale linearly with resolution."""

    min_blob_area: int = 15
    max_link_distance: float = 20.0
    max_gap: int = 3

    def scaled(self, s: float) -> "LinkerParams":
        return LinkerParams(
            min_blob_area=int(round(self.min_blob_area * s * s)),
            max_link_distance=self.max_link_distance * s,
            max_gap=self.max_gap,
        )


def label_components(mask: np.ndarray, min_area: int, frame: int = 0) -> list[Blob]:
    """8-connected blobs of a binary mask, row-major discovery order.

    Blobs smaller than min_area are dropped; labels stay 1-based and
    keep their pre-filter numbering.
    """
    labels, nblobs = _kernels.label_components(np.ascontiguousarray(mask, dtype=np.uint8))
    if nblobs == 0:
        return []
    ys, xs = np.nonzero(labels)
    ls = labels[ys, xs]
    areas = np.bincount(ls, minlength=nblobs + 1)
    sx = np.bincount(ls, weights=xs, minlength=nblobs + 1)
    sy = np.bincount(ls, weights=ys, minlength=nblobs + 1)
    x0 = np.full(nblobs + 1, np.iinfo(np.int64).max)
    y0 = np.full(nblobs + 1, np.iinfo(np.int64).max)
    x1 = np.full(nblobs + 1, -1)
    y1 = np.full(nblobs + 1, -1)
    np.minimum.at(x0, ls, xs)
    np.minimum.at(y0, ls, ys)
    np.maximum.at(x1, ls, xs)
    np.maximum.at(y1, ls, ys)
    out = []
    for lbl in range(1, nblobs + 1):
        a = int(areas[lbl])
        if a < min_area:
            continue
        out.append(Blob(
            label=lbl, area=a,
            cx=float(sx[lbl]) / a, cy=float(sy[lbl]) / a,
            bbox=(int(x0[lbl]), int(y0[lbl]), int(x1[lbl]), int(y1[lbl])),
            frame=frame,
        ))
    return out


def area_opening(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Binary area opening: keep 8-connected components of at least
    min_area pixels, drop the rest."""
    labels, nblobs = _kernels.label_components(np.ascontiguousarray(mask, dtype=np.uint8))
    if nblobs == 0:
        return np.zeros(mask.shape, dtype=bool)
    areas = np.bincount(labels.ravel(), minlength=nblobs + 1)
    keep = areas >= min_area
    keep[0] = False
    return keep[labels]


@dataclass
class Trajectory:
    id: int
    # parallel per-observation records
    steps: list[int] = field(default_factory=list)       # consumer frame counter
    sources: list[int] = field(default_factory=list)     # original frame index
    xs: list[float] = field(default_factory=list)
    ys: list[float] = field(default_factory=list)

    @property
    def last_step(self) -> int:
        return self.steps[-1]

    def add(self, step: int, source: int, x: float, y: float) -> None:
        self.steps.append(step)
        self.sources.append(source)
        self.xs.append(x)
        self.ys.append(y)


@dataclass(frozen=True)
class SpeedReport:
    trajectory_id: int
    mean_mph: float
    displacements: tuple[float, ...]
    f: int                      # inter-step count between the two crossings
    first_frame: int            # source index of the first observation
    last_frame: int             # source index of the last observation
    mean_x: float               # mean centroid x over the crossing window
    crossing_frames: tuple[int, int] | None = None  # source indices at the lines

    def anchor_frame(self) -> int:
        """Frame the measurement is pinned to: midpoint of the crossings.

        A trajectory can outlive its crossing window by a long stop, so the
        span midpoint is only a fallback for reports built without crossing
        records.
        """
        if self.crossing_frames is not None:
            return (self.crossing_frames[0] + self.crossing_frames[1]) // 2
        return (self.first_frame + self.last_frame) // 2


def _crossing_index(ys: list[float], row: float) -> int | None:
    """First observation index at or past the line, judged against the
    starting side. An observation exactly on the line counts as crossed."""
    s0 = np.sign(ys[0] - row)
    if s0 == 0:
        return 0
    for k in range(1, len(ys)):
        if np.sign(ys[k] - row) != s0:
            return k
    return None


def estimate_speed(traj: Trajectory, calib: Calibration) -> SpeedReport | None:
    """Mean speed of one trajectory between the two referential lines.

    Returns None when the trajectory never crosses both lines or crosses
    them at the same observation.
    """
    if len(traj.steps) < 2:
        return None
    r1, r2 = calib.lines
    k1 = _crossing_index(traj.ys, r1)
    k2 = _crossing_index(traj.ys, r2)
    if k1 is None or k2 is None:
        return None
    a, b = min(k1, k2), max(k1, k2)
    f = traj.steps[b] - traj.steps[a]
    if f <= 0:
        return None
    disp = []
    for k in range(a, b):
        dx = traj.xs[k + 1] - traj.xs[k]
        dy = traj.ys[k + 1] - traj.ys[k]
        disp.append(float(np.hypot(dx, dy)))
    total = float(sum(disp))
    mph = calib.pixels_to_mph(total, f)
    return SpeedReport(
        trajectory_id=traj.id,
        mean_mph=mph,
        displacements=tuple(disp),
        f=f,
        first_frame=traj.sources[0],
        last_frame=traj.sources[-1],
        mean_x=float(np.mean(traj.xs[a:b + 1])),
        crossing_frames=(traj.sources[a], traj.sources[b]),
    )


class TrajectoryLinker:
    """Greedy nearest-centroid correspondence with gap-based completion."""

    def __init__(self, params: LinkerParams | None = None):
        self.params = params or LinkerParams()
        self.active: list[Trajectory] = []
        self.completed: list[Trajectory] = []
        self._next_id = 1
        self._step = -1

    def step(self, blobs: list[Blob], source: int) -> None:
        self._step += 1
        step = self._step
        pairs = []
        for ti, traj in enumerate(self.active):
            tx, ty = traj.xs[-1], traj.ys[-1]
            for bi, blob in enumerate(blobs):
                d = float(np.hypot(blob.cx - tx, blob.cy - ty))
                if d <= self.params.max_link_distance:
                    pairs.append((d, ti, bi))
        pairs.sort()
        taken_t: set[int] = set()
        taken_b: set[int] = set()
        for d, ti, bi in pairs:
            if ti in taken_t or bi in taken_b:
                continue
            taken_t.add(ti)
            taken_b.add(bi)
            self.active[ti].add(step, source, blobs[bi].cx, blobs[bi].cy)
        for bi, blob in enumerate(blobs):
            if bi in taken_b:
                continue
            traj = Trajectory(id=self._next_id)
            self._next_id += 1
            traj.add(step, source, blob.cx, blob.cy)
            self.active.append(traj)
        # complete anything whose gap just exceeded the limit
        still = []
        for traj in self.active:
            if step - traj.last_step > self.params.max_gap:
                self.completed.append(traj)
            else:
                still.append(traj)
        self.active = still

    def finish(self) -> None:
        self.completed.extend(self.active)
        self.active = []


class SpeedDetector:
    """Streaming composition: label, link, and report on completion."""

    def __init__(self, calib: Calibration, params: LinkerParams | None = None):
        self.calib = calib
        self.params = params or LinkerParams()
        self.linker = TrajectoryLinker(self.params)
        self.reports: list[SpeedReport] = []
        self._reported = 0
        self._last_source = -1

    def step(self, mask: np.ndarray, source: int) -> list[SpeedReport]:
        if source <= self._last_source:
            raise ValueError(
                f"frame {source} arrived after frame {self._last_source}"
            )
        self._last_source = source
        blobs = label_components(mask, self.params.min_blob_area, frame=source)
        self.linker.step(blobs, source)
        return self._drain()

    def finish(self) -> list[SpeedReport]:
        self.linker.finish()
        return self._drain()

    def _drain(self) -> list[SpeedReport]:
        new = []
        while self._reported < len(self.linker.completed):
            traj = self.linker.completed[self._reported]
            self._reported += 1
            rep = estimate_speed(traj, self.calib)
            if rep is not None:
                new.append(rep)
        self.reports.extend(new)
        return new


def detect_speeds(masks, calib: Calibration,
                  params: LinkerParams | None = None) -> list[SpeedReport]:
    """Run the full detector over (source_index, mask) pairs in order."""
    det = SpeedDetector(calib, params)
    for source, mask in masks:
        det.step(mask, source)
    det.finish()
    return det.reports


def write_speed_csv(reports: list[SpeedReport], path) -> None:
    with open(path, "w") as fh:
        fh.write("trajectory_id,first_frame,last_frame,f,mean_mph\n")
        for r in reports:
            fh.write(f"{r.trajectory_id},{r.first_frame},{r.last_frame},"
                     f"{r.f},{r.mean_mph:.6f}\n")
