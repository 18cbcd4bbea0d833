"""Bandwidth-limited backhaul between the camera and the processing tier.

The link is a piecewise-constant rate trace feeding a one-frame token
bucket: a frame is delivered iff a full frame of bytes has accumulated at
its capture instant, otherwise the frame is dropped and the receiver
simply never sees it. Delivered frames keep their original index and
timestamp; it is the receiver's own frame counting that goes wrong.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .video import Frame, VideoSpec


@dataclass(frozen=True)
class LinkTrace:
    """Contiguous (t_start_s, rate_bytes_per_s) segments from t = 0."""

    segments: tuple[tuple[float, float], ...]
    duration_s: float

    def __post_init__(self):
        if not self.segments:
            raise ValueError("trace needs at least one segment")
        if self.segments[0][0] != 0.0:
            raise ValueError(f"first segment starts at {self.segments[0][0]}, not 0")
        prev = -1.0
        for t, rate in self.segments:
            if t <= prev:
                raise ValueError(f"segment starts not increasing at t={t}")
            if rate < 0:
                raise ValueError(f"negative rate {rate} at t={t}")
            prev = t

    def rate_at(self, t: float) -> float:
        r = self.segments[0][1]
        for start, rate in self.segments:
            if start > t:
                break
            r = rate
        return r

    def bytes_between(self, t0: float, t1: float) -> float:
        """Integral of the rate over [t0, t1]; constant extension outside."""
        if t1 <= t0:
            return 0.0
        total = 0.0
        bounds = [s for s, _ in self.segments] + [max(t1, self.duration_s)]
        for k, (start, rate) in enumerate(self.segments):
            seg_a, seg_b = start, bounds[k + 1]
            if k == 0:
                seg_a = min(seg_a, t0)     # extend first segment backwards
            if k == len(self.segments) - 1:
                seg_b = max(seg_b, t1)     # and the last one forwards
            a, b = max(t0, seg_a), min(t1, seg_b)
            if b > a:
                total += rate * (b - a)
        return total

    def mean_rate(self, t0: float, t1: float) -> float:
        if t1 <= t0:
            return self.rate_at(t0)
        return self.bytes_between(t0, t1) / (t1 - t0)


def three_segment(duration_s: float, base_rate: float, limit_rate: float,
                  limit_window: tuple[float, float]) -> LinkTrace:
    """Good/limited/good trace: full rate outside the window, capped inside."""
    a, b = limit_window
    if not 0.0 <= a < b <= duration_s:
        raise ValueError(f"limit window {limit_window} outside [0, {duration_s}]")
    segs = [(0.0, base_rate)] if a > 0.0 else []
    segs.append((a, limit_rate))
    if b < duration_s:
        segs.append((b, base_rate))
    return LinkTrace(segments=tuple(segs), duration_s=duration_s)


def constant_trace(duration_s: float, rate: float) -> LinkTrace:
    return LinkTrace(segments=((0.0, rate),), duration_s=duration_s)


def write_trace_csv(trace: LinkTrace, path) -> None:
    with open(path, "w") as fh:
        fh.write("t_start_s,rate_bytes_per_s\n")
        for t, rate in trace.segments:
            fh.write(f"{t:.6f},{rate:.3f}\n")


def load_trace_csv(path, duration_s: float) -> LinkTrace:
    segs = []
    with open(path) as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            segs.append((float(row["t_start_s"]), float(row["rate_bytes_per_s"])))
    return LinkTrace(segments=tuple(segs), duration_s=duration_s)


def reference_rate(spec: VideoSpec) -> float:
    """Bytes/s needed to carry the uncompressed stream: one frame per 1/fps."""
    return float(spec.frame_bytes) * spec.fps


def penalty_factor(c: float, c_t: float) -> float:
    if c_t <= 0.0:
        raise ValueError("condition threshold c_t must be positive")
    return min(c, c_t) / c_t


def measure_condition(trace: LinkTrace, t: float, window_s: float,
                      reference: float) -> float:
    """Normalized network condition c in [0, 1] from the trailing window."""
    if window_s <= 0.0:
        raise ValueError("measurement window must be positive")
    t0 = max(0.0, t - window_s)
    mean = trace.mean_rate(t0, t) if t > t0 else trace.rate_at(t)
    return min(max(mean / reference, 0.0), 1.0)


@dataclass(frozen=True)
class DegradedStream:
    frames: tuple[Frame, ...]
    source_count: int
    q_e: float
    q_c: float
    alpha: float
    c_mean: float

    @property
    def delivered_ratio(self) -> float:
        return len(self.frames) / self.source_count if self.source_count else 1.0


def transmit(frames: list[Frame], trace: LinkTrace, frame_bytes: int,
             dt: float, reference: float, c_t: float = 1.0,
             q_e: float = 1.0) -> DegradedStream:
    """Push a captured sequence through the rate-limited link.

    The bucket holds at most one frame of credit (a stalled link cannot
    bank a burst), and the link is assumed up at its t=0 rate for one
    frame interval before capture starts, so an unconstrained link is the
    identity from the very first frame. Delivery is tested with a hair of
    slack: rate * dt accumulates rounding, and a link at exactly the
    required rate must not drop every other frame over an ulp.
    """
    if not frames:
        return DegradedStream((), 0, q_e, q_e, 1.0, 1.0)
    cap = float(frame_bytes)
    full = cap * (1.0 - 1e-9)
    bucket = min(cap, trace.rate_at(0.0) * dt)
    delivered = []
    prev_t = frames[0].t
    for fr in frames:
        bucket = min(cap, bucket + trace.bytes_between(prev_t, fr.t))
        prev_t = fr.t
        if bucket >= full:
            bucket = max(bucket - cap, 0.0)
            delivered.append(fr)
    t_end = frames[-1].t + dt
    c_mean = min(max(trace.mean_rate(0.0, t_end) / reference, 0.0), 1.0)
    alpha = penalty_factor(c_mean, c_t)
    return DegradedStream(
        frames=tuple(delivered), source_count=len(frames),
        q_e=q_e, q_c=alpha * q_e, alpha=alpha, c_mean=c_mean,
    )
