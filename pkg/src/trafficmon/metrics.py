"""Detection quality metrics and the two-group variance analysis.

Congestion accuracy is scored over events (maximal runs of flagged frames),
speed accuracy over vehicles (reports are assigned to scripted vehicles by
spawn time and lane). A missed vehicle counts as 100% relative error in the
mean error and as a full truth-speed residual in the RMS error; extra
reports that match no vehicle are counted but do not enter the speed sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .channel import LinkTrace
from .scene import GroundTruth, VehicleTruth
from .speed import SpeedReport

LANE_WEIGHT = 0.05  # px of lane offset worth one second of spawn offset


@dataclass(frozen=True, slots=True)
class ErrorReport:
    """One run scored against its script."""

    eps_c: float | None  # None when the script has no congestion events
    eps_s: float
    eps_rms: float
    avg_speed_mph: float  # nan when nothing was detected
    n_truth_events: int
    n_detected_events: int
    n_truth_vehicles: int
    n_matched: int
    n_missed: int
    n_spurious: int


@dataclass(frozen=True, slots=True)
class AnovaResult:
    coefficient: float  # mean(group 1) - mean(group 0)
    f_stat: float
    p_value: float | None  # None when within-group variance is zero
    group_means: tuple[float, float]
    group_sizes: tuple[int, int]
    degenerate: bool


@dataclass(frozen=True, slots=True)
class WindowPoint:
    """One sliding-window sample of the error-vs-bad-fraction curve."""

    phi: float  # requested bad-time fraction
    phi_achieved: float
    start_frame: int
    length: int
    report: ErrorReport | None  # None when phi is unreachable on this trace
    reached: bool


def flag_events(flags: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of true flags as half-open (start, stop) frame ranges."""
    f = np.asarray(flags, dtype=bool)
    if f.ndim != 1:
        raise ValueError("flags must be a 1-d series")
    d = np.diff(f.astype(np.int8))
    starts = list(np.nonzero(d == 1)[0] + 1)
    stops = list(np.nonzero(d == -1)[0] + 1)
    if len(f) and f[0]:
        starts.insert(0, 0)
    if len(f) and f[-1]:
        stops.append(len(f))
    return list(zip(starts, stops))


def congestion_error(detected: np.ndarray, truth: np.ndarray) -> float | None:
    """Event-level congestion error: (missed + spurious) / truth events.

    A detected event matches a truth event when their frame ranges overlap.
    Returns None when the truth series has no events at all.
    """
    det = np.asarray(detected, dtype=bool)
    tru = np.asarray(truth, dtype=bool)
    if det.shape != tru.shape:
        raise ValueError(f"series lengths differ: {det.shape} vs {tru.shape}")
    truth_events = flag_events(tru)
    detected_events = flag_events(det)
    if not truth_events:
        return None
    missed = sum(
        1 for (a, b) in truth_events
        if not any(a < d1 and c < b for (c, d1) in detected_events)
    )
    spurious = sum(
        1 for (c, d1) in detected_events
        if not any(a < d1 and c < b for (a, b) in truth_events)
    )
    return (missed + spurious) / len(truth_events)


def match_reports(
    reports: list[SpeedReport],
    vehicles: list[VehicleTruth],
    dt: float,
    lane_weight: float = LANE_WEIGHT,
) -> tuple[list[tuple[VehicleTruth, SpeedReport]],
           list[VehicleTruth], list[SpeedReport]]:
    """Greedy one-to-one assignment of reports to scripted vehicles.

    Cost is seconds of spawn-time offset plus ``lane_weight`` per pixel of
    lane offset. Vehicles that never cross both referential lines carry no
    speed truth and are excluded up front.
    """
    truths = [v for v in vehicles if v.mean_mph is not None]
    pairs = []
    for vi, v in enumerate(truths):
        for ri, r in enumerate(reports):
            cost = abs(r.first_frame * dt - v.spawn_s) \
                + lane_weight * abs(r.mean_x - v.lane_x_px)
            pairs.append((cost, vi, ri))
    pairs.sort(key=lambda p: (p[0], p[1], p[2]))
    taken_v: set[int] = set()
    taken_r: set[int] = set()
    matches = []
    for cost, vi, ri in pairs:
        if vi in taken_v or ri in taken_r:
            continue
        taken_v.add(vi)
        taken_r.add(ri)
        matches.append((truths[vi], reports[ri]))
    unmatched_v = [v for vi, v in enumerate(truths) if vi not in taken_v]
    unmatched_r = [r for ri, r in enumerate(reports) if ri not in taken_r]
    return matches, unmatched_v, unmatched_r


def speed_error(matches: list[tuple[float, float]], n_missed: int = 0) -> float:
    """Mean relative speed error; each missed vehicle contributes 1.0."""
    n = len(matches) + n_missed
    if n == 0:
        return 0.0
    total = sum(abs(t - d) / t for t, d in matches) + float(n_missed)
    return total / n


def rms_error(matches: list[tuple[float, float]],
              missed_truth_mph: list[float] | None = None) -> float:
    """RMS speed error in mph; a missed vehicle leaves its full truth speed."""
    missed = missed_truth_mph or []
    n = len(matches) + len(missed)
    if n == 0:
        return 0.0
    total = sum((t - d) ** 2 for t, d in matches) + sum(t ** 2 for t in missed)
    return math.sqrt(total / n)


def evaluate_run(
    detected_flags: np.ndarray,
    reports: list[SpeedReport],
    truth: GroundTruth,
    dt: float,
) -> ErrorReport:
    """Score one run's congestion series and speed reports against truth."""
    det = np.asarray(detected_flags, dtype=bool)
    if len(det) != truth.n_frames:
        raise ValueError(
            f"verdict series has {len(det)} frames, truth has {truth.n_frames}"
        )
    eps_c = congestion_error(det, truth.flags)
    matches, unmatched_v, unmatched_r = match_reports(reports, truth.vehicles, dt)
    speed_pairs = [(v.mean_mph, r.mean_mph) for v, r in matches]
    eps_s = speed_error(speed_pairs, len(unmatched_v))
    eps_rms = rms_error(speed_pairs, [v.mean_mph for v in unmatched_v])
    avg = float(np.mean([r.mean_mph for r in reports])) if reports else math.nan
    return ErrorReport(
        eps_c=eps_c,
        eps_s=eps_s,
        eps_rms=eps_rms,
        avg_speed_mph=avg,
        n_truth_events=len(flag_events(truth.flags)),
        n_detected_events=len(flag_events(det)),
        n_truth_vehicles=sum(1 for v in truth.vehicles if v.mean_mph is not None),
        n_matched=len(matches),
        n_missed=len(unmatched_v),
        n_spurious=len(unmatched_r),
    )


def _window_truth(truth: GroundTruth, start: int, stop: int) -> GroundTruth:
    """Truth restricted to [start, stop); only vehicles whose crossing
    midpoint falls inside keep their speed truth."""
    vehicles = []
    for v in truth.vehicles:
        keep = v.cross_frames is not None and \
            start <= (v.cross_frames[0] + v.cross_frames[1]) // 2 < stop
        vehicles.append(
            v if keep else VehicleTruth(v.index, v.spawn_s, v.lane_x_px,
                                        v.first_frame, v.last_frame, None, None)
        )
    return GroundTruth(
        flags=truth.flags[start:stop],
        stopped_counts=truth.stopped_counts[start:stop],
        positions=truth.positions[start:stop],
        speeds_mps=truth.speeds_mps[start:stop],
        vehicles=vehicles,
    )


def sliding_window_errors(
    detected_flags: np.ndarray,
    reports: list[SpeedReport],
    truth: GroundTruth,
    trace: LinkTrace,
    reference: float,
    dt: float,
    phi_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0),
    window_frac: float = 0.2,
    tol: float = 0.05,
) -> list[WindowPoint]:
    """Error-vs-bad-fraction curve over a sliding window.

    A frame is in bad condition when the trace rate at its capture time is
    below ``reference``. For each target fraction the earliest window whose
    achieved fraction is closest to the target is scored; targets no window
    can reach within ``tol`` are returned unscored with ``reached=False``.
    """
    n = truth.n_frames
    length = max(1, int(round(window_frac * n)))
    bad = np.array([trace.rate_at(i * dt) < reference for i in range(n)],
                   dtype=np.int64)
    cum = np.concatenate(([0], np.cumsum(bad)))
    starts = np.arange(0, n - length + 1)
    frac = (cum[starts + length] - cum[starts]) / length
    det = np.asarray(detected_flags, dtype=bool)
    points = []
    for phi in phi_grid:
        gap = np.abs(frac - phi)
        s = int(np.argmin(gap))  # argmin takes the earliest tie
        achieved = float(frac[s])
        if gap[s] > tol:
            points.append(WindowPoint(phi, achieved, s, length, None, False))
            continue
        stop = s + length
        wtruth = _window_truth(truth, s, stop)
        wreports = [r for r in reports if s <= r.anchor_frame() < stop]
        rep = evaluate_run(det[s:stop], wreports, wtruth, dt)
        points.append(WindowPoint(phi, achieved, s, length, rep, True))
    return points


def _f_pdf(x: float, d1: float, d2: float) -> float:
    if x <= 0.0:
        return 0.0
    lnb = math.lgamma(d1 / 2) + math.lgamma(d2 / 2) - math.lgamma((d1 + d2) / 2)
    ln = (d1 / 2) * math.log(d1 / d2) + (d1 / 2 - 1.0) * math.log(x) \
        - ((d1 + d2) / 2) * math.log1p(d1 * x / d2) - lnb
    return math.exp(ln)


def f_tail_probability(f: float, d1: int, d2: int) -> float:
    """P(F > f) for the F(d1, d2) distribution, by numeric integration.

    Below the distribution's scale the body [0, f] is integrated and
    complemented; the quadrature handles the integrable endpoint
    singularity at 0 (d1 = 1) better on a finite interval than on the
    infinite tail.
    """
    if f <= 0.0:
        return 1.0
    if math.isinf(f):
        return 0.0
    args = (float(d1), float(d2))
    if f < 1.0:
        body, _ = integrate.quad(_f_pdf, 0.0, f, args=args,
                                 epsabs=1e-14, epsrel=1e-12, limit=200)
        p = 1.0 - body
    else:
        # tail under x -> 1/u, which maps [f, inf) to the finite (0, 1/f]
        def g(u: float, a: float, b: float) -> float:
            return _f_pdf(1.0 / u, a, b) / (u * u)

        p, _ = integrate.quad(g, 0.0, 1.0 / f, args=args,
                              epsabs=0.0, epsrel=1e-12, limit=200)
    return min(max(p, 0.0), 1.0)


def one_way_anova(factor, values) -> AnovaResult:
    """Two-group one-way analysis of variance.

    ``factor`` holds the 0/1 level of each run, ``values`` its error. The
    coefficient is the level-1 mean minus the level-0 mean. With zero
    within-group variance the F statistic has no finite null distribution,
    so the result is flagged degenerate and p is None (or 0 when the groups
    still differ).
    """
    fac = np.asarray(factor, dtype=np.int64)
    val = np.asarray(values, dtype=np.float64)
    if fac.shape != val.shape or fac.ndim != 1:
        raise ValueError("factor and values must be aligned 1-d sequences")
    if not np.isin(fac, (0, 1)).all():
        raise ValueError("factor levels must be 0 or 1")
    g0 = val[fac == 0]
    g1 = val[fac == 1]
    if len(g0) < 2 or len(g1) < 2:
        raise ValueError(
            f"each level needs at least 2 runs, got {len(g0)} and {len(g1)}"
        )
    m0 = float(np.mean(g0))
    m1 = float(np.mean(g1))
    grand = float(np.mean(val))
    ssb = len(g0) * (m0 - grand) ** 2 + len(g1) * (m1 - grand) ** 2
    ssw = float(np.sum((g0 - m0) ** 2) + np.sum((g1 - m1) ** 2))
    dfw = len(val) - 2
    coeff = m1 - m0
    if ssw == 0.0:
        if ssb == 0.0:
            return AnovaResult(coeff, 0.0, None, (m0, m1),
                               (len(g0), len(g1)), True)
        return AnovaResult(coeff, math.inf, 0.0, (m0, m1),
                           (len(g0), len(g1)), True)
    f_stat = (ssb / 1.0) / (ssw / dfw)
    p = f_tail_probability(f_stat, 1, dfw)
    return AnovaResult(coeff, f_stat, p, (m0, m1), (len(g0), len(g1)), False)
