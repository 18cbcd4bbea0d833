"""Scoring metrics checked against worked examples and plain references."""

import math

import numpy as np
import pytest
from scipy import stats

import naive_ref
from trafficmon.metrics import (
    congestion_error,
    evaluate_run,
    f_tail_probability,
    flag_events,
    match_reports,
    one_way_anova,
    rms_error,
    sliding_window_errors,
    speed_error,
)
from trafficmon.channel import LinkTrace, constant_trace
from trafficmon.scene import GroundTruth, VehicleTruth
from trafficmon.speed import SpeedReport


def _truth(n, event_ranges=(), vehicles=()):
    flags = np.zeros(n, dtype=bool)
    for a, b in event_ranges:
        flags[a:b] = True
    k = max(len(vehicles), 1)
    return GroundTruth(
        flags=flags,
        stopped_counts=np.zeros(n, dtype=np.int64),
        positions=np.full((n, k, 2), np.nan),
        speeds_mps=np.full((n, k), np.nan),
        vehicles=list(vehicles),
    )


def _vehicle(index, spawn_s, lane_x, cross=None, mph=None):
    return VehicleTruth(index, spawn_s, lane_x, 0, 10, cross, mph)


def _report(tid, mph, first, last, mean_x):
    return SpeedReport(tid, mph, (), 5, first, last, mean_x)


def test_flag_events_runs():
    assert flag_events(np.array([], dtype=bool)) == []
    assert flag_events(np.zeros(5, dtype=bool)) == []
    assert flag_events(np.ones(4, dtype=bool)) == [(0, 4)]
    f = np.array([1, 1, 0, 0, 1, 0, 1, 1], dtype=bool)
    assert flag_events(f) == [(0, 2), (4, 5), (6, 8)]
    with pytest.raises(ValueError, match="1-d"):
        flag_events(np.zeros((2, 2), dtype=bool))


def test_congestion_error_worked_example():
    n = 100
    truth = np.zeros(n, dtype=bool)
    for a, b in ((10, 20), (40, 50), (70, 80)):
        truth[a:b] = True
    det = np.zeros(n, dtype=bool)
    det[12:18] = True   # matches the first event
    det[44:52] = True   # matches the second
    det[90:95] = True   # spurious
    # one missed truth event plus one spurious detection over three events
    assert congestion_error(det, truth) == pytest.approx(2.0 / 3.0)


def test_congestion_error_edge_cases():
    none_truth = np.zeros(10, dtype=bool)
    det = np.zeros(10, dtype=bool)
    det[3:5] = True
    assert congestion_error(det, none_truth) is None
    truth = np.zeros(10, dtype=bool)
    truth[2:6] = True
    assert congestion_error(truth.copy(), truth) == 0.0
    # adjacent but non-overlapping ranges do not match
    offset = np.zeros(10, dtype=bool)
    offset[6:8] = True
    assert congestion_error(offset, truth) == 2.0
    with pytest.raises(ValueError, match="lengths differ"):
        congestion_error(np.zeros(4, dtype=bool), np.zeros(5, dtype=bool))


def test_congestion_error_matches_set_reference():
    rng = np.random.default_rng(404)
    for _ in range(40):
        n = int(rng.integers(10, 120))
        det = rng.random(n) < 0.3
        tru = rng.random(n) < 0.2
        expect = naive_ref.congestion_error(det, tru)
        got = congestion_error(det, tru)
        if expect is None:
            assert got is None
        else:
            assert got == pytest.approx(expect)


def test_match_reports_prefers_globally_cheapest():
    dt = 0.1
    v0 = _vehicle(0, spawn_s=1.0, lane_x=100.0, cross=(5, 9), mph=20.0)
    v1 = _vehicle(1, spawn_s=1.2, lane_x=100.0, cross=(6, 10), mph=21.0)
    r_close = _report(0, 19.0, first=10, last=20, mean_x=100.0)  # t=1.0
    r_far = _report(1, 22.0, first=13, last=22, mean_x=100.0)    # t=1.3
    matches, unmatched_v, unmatched_r = match_reports(
        [r_far, r_close], [v0, v1], dt)
    got = {(v.index, r.trajectory_id) for v, r in matches}
    assert got == {(0, 0), (1, 1)}
    assert not unmatched_v and not unmatched_r


def test_match_reports_lane_weight():
    dt = 0.1
    # same spawn-time cost; the lane term decides: 40 px * 0.05 = 2.0 s
    v = _vehicle(0, spawn_s=0.0, lane_x=0.0, cross=(0, 2), mph=10.0)
    near = _report(0, 10.0, first=0, last=4, mean_x=10.0)
    far = _report(1, 10.0, first=0, last=4, mean_x=50.0)
    matches, _, unmatched_r = match_reports([far, near], [v], dt)
    assert matches[0][1].trajectory_id == 0
    assert unmatched_r == [far]


def test_match_reports_excludes_unscored_vehicles():
    dt = 0.1
    ghost = _vehicle(0, 0.0, 0.0, cross=None, mph=None)
    real = _vehicle(1, 0.5, 0.0, cross=(3, 7), mph=15.0)
    r = _report(0, 15.0, first=5, last=9, mean_x=0.0)
    matches, unmatched_v, unmatched_r = match_reports([r], [ghost, real], dt)
    assert [v.index for v, _ in matches] == [1]
    assert unmatched_v == [] and unmatched_r == []


def test_match_reports_against_reference():
    rng = np.random.default_rng(77)
    dt = 1.0 / 15.0
    for _ in range(30):
        nv = int(rng.integers(1, 5))
        nr = int(rng.integers(1, 5))
        vehicles = [
            _vehicle(i, float(rng.uniform(0, 10)), float(rng.uniform(0, 300)),
                     cross=(1, 3), mph=10.0)
            for i in range(nv)
        ]
        reports = [
            _report(j, 10.0, int(rng.integers(0, 150)),
                    int(rng.integers(150, 300)), float(rng.uniform(0, 300)))
            for j in range(nr)
        ]
        costs = np.array([
            [abs(r.first_frame * dt - v.spawn_s) + 0.05 * abs(r.mean_x - v.lane_x_px)
             for r in reports]
            for v in vehicles
        ])
        expect = set(naive_ref.match_greedy(costs))
        matches, _, _ = match_reports(reports, vehicles, dt)
        got = {(v.index, r.trajectory_id) for v, r in matches}
        assert got == expect


def test_speed_error_worked_example():
    assert speed_error([(10.0, 10.0), (20.0, 10.0)]) == pytest.approx(0.25)
    assert speed_error([], n_missed=2) == 1.0
    assert speed_error([(10.0, 9.0)], n_missed=1) == pytest.approx(0.55)
    assert speed_error([]) == 0.0


def test_rms_error_worked_example():
    assert rms_error([(10.0, 10.0), (20.0, 10.0)]) == pytest.approx(
        math.sqrt(50.0))
    assert rms_error([], [9.0]) == 9.0
    assert rms_error([]) == 0.0


def test_speed_metrics_against_reference():
    rng = np.random.default_rng(31)
    for _ in range(25):
        pairs = [(float(rng.uniform(5, 40)), float(rng.uniform(5, 40)))
                 for _ in range(int(rng.integers(1, 8)))]
        n_missed = int(rng.integers(0, 3))
        missed = [float(rng.uniform(5, 40)) for _ in range(n_missed)]
        assert speed_error(pairs, n_missed) == pytest.approx(
            naive_ref.speed_error(pairs, n_missed), rel=1e-12)
        assert rms_error(pairs, missed) == pytest.approx(
            naive_ref.rms_error(pairs, missed), rel=1e-12)


def test_evaluate_run_counts_and_errors():
    v0 = _vehicle(0, 1.0, 50.0, cross=(20, 40), mph=20.0)
    v1 = _vehicle(1, 4.0, 150.0, cross=(70, 90), mph=20.0)
    ghost = _vehicle(2, 8.0, 250.0, cross=None, mph=None)
    truth = _truth(150, event_ranges=((100, 130),), vehicles=[v0, v1, ghost])
    det = np.zeros(150, dtype=bool)
    det[105:125] = True
    reports = [_report(0, 22.0, 15, 45, 50.0)]
    rep = evaluate_run(det, reports, truth, dt=0.1)
    assert rep.eps_c == 0.0
    assert rep.n_truth_events == 1 and rep.n_detected_events == 1
    assert rep.n_truth_vehicles == 2
    assert rep.n_matched == 1 and rep.n_missed == 1 and rep.n_spurious == 0
    assert rep.eps_s == pytest.approx((2.0 / 20.0 + 1.0) / 2.0)
    assert rep.eps_rms == pytest.approx(math.sqrt((4.0 + 400.0) / 2.0))
    assert rep.avg_speed_mph == 22.0


def test_evaluate_run_validation_and_nan_average():
    truth = _truth(50)
    with pytest.raises(ValueError, match="frames"):
        evaluate_run(np.zeros(49, dtype=bool), [], truth, 0.1)
    rep = evaluate_run(np.zeros(50, dtype=bool), [], truth, 0.1)
    assert rep.eps_c is None
    assert math.isnan(rep.avg_speed_mph)


def test_anova_f_equals_t_squared():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n0 = int(rng.integers(3, 12))
        n1 = int(rng.integers(3, 12))
        g0 = rng.normal(0.4, 0.1, n0)
        g1 = rng.normal(0.6, 0.15, n1)
        factor = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
        values = np.concatenate([g0, g1])
        res = one_way_anova(factor, values)
        t = stats.ttest_ind(g1, g0, equal_var=True)
        assert res.f_stat == pytest.approx(t.statistic ** 2, rel=1e-6)
        assert res.p_value == pytest.approx(t.pvalue, rel=1e-6)
        assert res.coefficient == pytest.approx(float(g1.mean() - g0.mean()))
        ref = naive_ref.anova_two_group(factor, values)
        assert res.f_stat == pytest.approx(ref[1], rel=1e-9)
        assert res.p_value == pytest.approx(ref[2], rel=1e-9)


def test_anova_validation():
    with pytest.raises(ValueError, match="levels"):
        one_way_anova([0, 1, 2, 1], [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ValueError, match="at least 2"):
        one_way_anova([0, 1, 1], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError, match="aligned"):
        one_way_anova([0, 0, 1, 1], [1.0, 2.0, 3.0])


def test_anova_degenerate_groups():
    same = one_way_anova([0, 0, 1, 1], [2.0, 2.0, 2.0, 2.0])
    assert same.degenerate and same.f_stat == 0.0 and same.p_value is None
    split = one_way_anova([0, 0, 1, 1], [1.0, 1.0, 3.0, 3.0])
    assert split.degenerate
    assert math.isinf(split.f_stat) and split.p_value == 0.0
    assert split.coefficient == 2.0


def test_f_tail_against_scipy():
    for d2 in (3, 10, 28, 100):
        for f in (0.01, 0.1, 0.5, 0.9, 0.999, 1.0, 1.5, 2.0, 5.0, 10.0, 50.0):
            expect = float(stats.f.sf(f, 1, d2))
            got = f_tail_probability(f, 1, d2)
            assert got == pytest.approx(expect, rel=1e-9, abs=1e-300)
    assert f_tail_probability(0.0, 1, 10) == 1.0
    assert f_tail_probability(-1.0, 1, 10) == 1.0
    assert f_tail_probability(math.inf, 1, 10) == 0.0


def _two_phase_trace(n, dt, ref, bad_until_s):
    return LinkTrace(segments=((0.0, ref * 0.5), (bad_until_s, ref)),
                     duration_s=n * dt)


def test_sliding_window_positions():
    n, dt, ref = 100, 0.1, 100.0
    truth = _truth(n)
    trace = _two_phase_trace(n, dt, ref, bad_until_s=5.0)
    points = sliding_window_errors(
        np.zeros(n, dtype=bool), [], truth, trace, ref, dt)
    by_phi = {p.phi: p for p in points}
    # 20-frame window over a 50-frame bad prefix; earliest window wins ties
    assert by_phi[1.0].start_frame == 0
    assert by_phi[0.75].start_frame == 35
    assert by_phi[0.5].start_frame == 40
    assert by_phi[0.25].start_frame == 45
    assert by_phi[0.0].start_frame == 50
    for p in points:
        assert p.reached and p.length == 20
        assert p.phi_achieved == pytest.approx(p.phi)


def test_sliding_window_unreachable_targets():
    n, dt, ref = 60, 0.1, 100.0
    truth = _truth(n)
    points = sliding_window_errors(
        np.zeros(n, dtype=bool), [], truth, constant_trace(6.0, ref), ref, dt)
    by_phi = {p.phi: p for p in points}
    assert by_phi[0.0].reached
    for phi in (0.25, 0.5, 0.75, 1.0):
        assert not by_phi[phi].reached
        assert by_phi[phi].report is None


def test_sliding_window_assigns_by_midpoint():
    n, dt, ref = 100, 0.1, 100.0
    va = _vehicle(0, 4.0, 50.0, cross=(42, 46), mph=20.0)
    vb = _vehicle(1, 0.5, 150.0, cross=(10, 14), mph=10.0)
    truth = _truth(n, vehicles=[va, vb])
    reports = [
        _report(0, 20.0, 41, 47, 50.0),   # midpoint 44
        _report(1, 10.0, 9, 15, 150.0),   # midpoint 12
    ]
    trace = _two_phase_trace(n, dt, ref, bad_until_s=5.0)
    points = sliding_window_errors(
        np.zeros(n, dtype=bool), reports, truth, trace, ref, dt)
    by_phi = {p.phi: p for p in points}
    half = by_phi[0.5].report     # frames [40, 60): vehicle A only
    assert half.n_truth_vehicles == 1 and half.n_matched == 1
    assert half.eps_s == 0.0
    full = by_phi[1.0].report     # frames [0, 20): vehicle B only
    assert full.n_truth_vehicles == 1 and full.n_matched == 1
    assert full.eps_s == 0.0


def test_sliding_window_length_rule():
    n, dt, ref = 7, 0.1, 100.0
    truth = _truth(n)
    points = sliding_window_errors(
        np.zeros(n, dtype=bool), [], truth, constant_trace(0.7, ref), ref, dt,
        phi_grid=(0.0,), window_frac=0.2)
    assert points[0].length == 1  # round(0.2 * 7) = 1
