"""Rate traces and the one-frame token bucket that drops frames."""

import numpy as np
import pytest

from trafficmon.channel import (
    DegradedStream,
    LinkTrace,
    constant_trace,
    load_trace_csv,
    measure_condition,
    penalty_factor,
    reference_rate,
    three_segment,
    transmit,
    write_trace_csv,
)
from trafficmon.video import Frame, VideoSpec


SPEC = VideoSpec(width=640, height=360, dims=3, fps=15.0)


def _frames(n, dt, frame_bytes=12):
    h = w = 2
    px = np.zeros((h, w, 3), dtype=np.uint8)
    return [Frame(index=k, t=k * dt, pixels=px) for k in range(n)]


def test_trace_validation():
    with pytest.raises(ValueError, match="at least one segment"):
        LinkTrace(segments=(), duration_s=1.0)
    with pytest.raises(ValueError, match="not 0"):
        LinkTrace(segments=((1.0, 5.0),), duration_s=2.0)
    with pytest.raises(ValueError, match="not increasing"):
        LinkTrace(segments=((0.0, 5.0), (3.0, 4.0), (3.0, 2.0)), duration_s=5.0)
    with pytest.raises(ValueError, match="negative rate"):
        LinkTrace(segments=((0.0, -1.0),), duration_s=1.0)


def test_rate_at_and_integral():
    tr = LinkTrace(segments=((0.0, 10.0), (2.0, 0.0), (5.0, 4.0)), duration_s=8.0)
    assert tr.rate_at(0.0) == 10.0
    assert tr.rate_at(1.999) == 10.0
    assert tr.rate_at(2.0) == 0.0
    assert tr.rate_at(4.9) == 0.0
    assert tr.rate_at(7.0) == 4.0
    assert tr.bytes_between(0.0, 8.0) == pytest.approx(10 * 2 + 0 + 4 * 3)
    assert tr.bytes_between(1.0, 6.0) == pytest.approx(10 * 1 + 0 + 4 * 1)
    assert tr.bytes_between(3.0, 3.0) == 0.0
    # constant extension outside the recorded span
    assert tr.bytes_between(-2.0, 1.0) == pytest.approx(10 * 3)
    assert tr.bytes_between(6.0, 12.0) == pytest.approx(4 * 6)


def test_mean_rate():
    tr = LinkTrace(segments=((0.0, 6.0), (3.0, 12.0)), duration_s=6.0)
    assert tr.mean_rate(0.0, 6.0) == pytest.approx(9.0)
    assert tr.mean_rate(4.0, 4.0) == 12.0  # degenerate span: point rate


def test_three_segment_shapes():
    tr = three_segment(10.0, 100.0, 25.0, (3.0, 7.0))
    assert tr.segments == ((0.0, 100.0), (3.0, 25.0), (7.0, 100.0))
    head = three_segment(10.0, 100.0, 25.0, (0.0, 7.0))
    assert head.segments == ((0.0, 25.0), (7.0, 100.0))
    tail = three_segment(10.0, 100.0, 25.0, (3.0, 10.0))
    assert tail.segments == ((0.0, 100.0), (3.0, 25.0))
    with pytest.raises(ValueError, match="limit window"):
        three_segment(10.0, 100.0, 25.0, (7.0, 3.0))
    with pytest.raises(ValueError, match="limit window"):
        three_segment(10.0, 100.0, 25.0, (3.0, 11.0))


def test_reference_rate_value():
    assert reference_rate(SPEC) == 640 * 360 * 3 * 15.0  # 10,368,000 B/s


def test_transmit_identity_at_reference_rate():
    dt = SPEC.dt
    n = 90
    frames = _frames(n, dt)
    fb = frames[0].pixels.size
    ref = fb / dt
    stream = transmit(frames, constant_trace(n * dt, ref), fb, dt, ref)
    assert len(stream.frames) == n
    assert [f.index for f in stream.frames] == list(range(n))
    assert stream.delivered_ratio == 1.0
    assert stream.alpha == pytest.approx(1.0)


def test_transmit_half_rate_alternates():
    dt = 1.0 / 15.0
    n = 120
    frames = _frames(n, dt)
    fb = frames[0].pixels.size
    ref = fb / dt
    stream = transmit(frames, constant_trace(n * dt, 0.5 * ref), fb, dt, ref)
    assert len(stream.frames) == n // 2
    # the primed bucket is half full, so odd frames are the ones delivered
    assert [f.index for f in stream.frames] == list(range(1, n, 2))
    assert stream.c_mean == pytest.approx(0.5)
    assert stream.alpha == pytest.approx(0.5)


def test_transmit_cap_quantizes_low_rates():
    # the one-frame cap discards leftover credit on every delivery, so a
    # fractional-rate link delivers exactly every ceil(1/factor) frames
    dt = 1.0 / 15.0
    n = 300
    frames = _frames(n, dt)
    fb = frames[0].pixels.size
    ref = fb / dt
    for factor, period in ((0.3, 4), (0.4, 3), (0.75, 2)):
        stream = transmit(frames, constant_trace(n * dt, factor * ref),
                          fb, dt, ref)
        assert stream.delivered_ratio == pytest.approx(1.0 / period)
        gaps = np.diff([f.index for f in stream.frames])
        assert set(gaps.tolist()) == {period}


def test_transmit_zero_rate_window():
    dt = 0.1
    n = 50
    frames = _frames(n, dt)
    fb = frames[0].pixels.size
    ref = fb / dt
    tr = three_segment(n * dt, ref, 0.0, (1.0, 4.0))
    stream = transmit(frames, tr, fb, dt, ref)
    idx = [f.index for f in stream.frames]
    blocked = [k for k in idx if 1.0 < k * dt <= 4.0]
    # at most the one frame funded by credit banked before the outage
    assert len(blocked) <= 1
    assert [k for k in idx if k * dt <= 1.0] == list(range(11))


def test_transmit_monotone_in_rate():
    dt = 1.0 / 15.0
    n = 150
    frames = _frames(n, dt)
    fb = frames[0].pixels.size
    ref = fb / dt
    counts = []
    for factor in (0.2, 0.4, 0.6, 0.8, 1.0):
        s = transmit(frames, constant_trace(n * dt, factor * ref), fb, dt, ref)
        counts.append(len(s.frames))
    assert counts == sorted(counts)


def test_transmit_keeps_index_and_timestamp():
    dt = 0.2
    frames = _frames(30, dt)
    fb = frames[0].pixels.size
    ref = fb / dt
    stream = transmit(frames, constant_trace(6.0, 0.4 * ref), fb, dt, ref)
    for f in stream.frames:
        assert f.t == pytest.approx(f.index * dt)
        assert f.pixels is frames[f.index].pixels


def test_transmit_quality_scaling():
    dt = 0.1
    frames = _frames(40, dt)
    fb = frames[0].pixels.size
    ref = fb / dt
    stream = transmit(frames, constant_trace(4.0, 0.25 * ref), fb, dt, ref,
                      c_t=0.5, q_e=0.8)
    assert stream.c_mean == pytest.approx(0.25)
    assert stream.alpha == pytest.approx(0.5)   # min(0.25, 0.5) / 0.5
    assert stream.q_c == pytest.approx(0.4)
    assert stream.q_e == 0.8


def test_transmit_empty_stream():
    stream = transmit([], constant_trace(1.0, 100.0), 10, 0.1, 100.0)
    assert stream.frames == ()
    assert stream.delivered_ratio == 1.0


def test_penalty_factor():
    assert penalty_factor(0.3, 0.6) == pytest.approx(0.5)
    assert penalty_factor(0.9, 0.6) == 1.0
    with pytest.raises(ValueError, match="positive"):
        penalty_factor(0.5, 0.0)


def test_measure_condition():
    ref = 100.0
    tr = LinkTrace(segments=((0.0, 100.0), (5.0, 25.0)), duration_s=10.0)
    assert measure_condition(tr, 3.0, 2.0, ref) == pytest.approx(1.0)
    assert measure_condition(tr, 7.0, 2.0, ref) == pytest.approx(0.25)
    assert measure_condition(tr, 6.0, 2.0, ref) == pytest.approx(0.625)
    assert measure_condition(tr, 0.0, 2.0, ref) == pytest.approx(1.0)  # t == t0
    over = LinkTrace(segments=((0.0, 500.0),), duration_s=1.0)
    assert measure_condition(over, 0.5, 1.0, ref) == 1.0  # clamped
    with pytest.raises(ValueError, match="window"):
        measure_condition(tr, 1.0, 0.0, ref)


def test_trace_csv_round_trip(tmp_path):
    tr = three_segment(12.0, 1000.0, 300.0, (4.0, 8.0))
    path = tmp_path / "trace.csv"
    write_trace_csv(tr, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t_start_s,rate_bytes_per_s"
    back = load_trace_csv(path, 12.0)
    assert back.segments == tr.segments
    assert back.duration_s == 12.0
