"""Experiment driver: scripted scenes x weathers x strategies to CSV reports.

A YAML config picks a scene preset (or inline vehicle list), the weather
set, the strategy set, seeds, and the channel shape. Each (weather, seed)
cell renders one scene and evaluates every strategy on it, so schemes are
compared on identical input. Outputs are results.csv, curves.csv,
anova.csv, switches.csv, summary.txt and rendered figures.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .channel import LinkTrace, constant_trace, reference_rate, three_segment
from .congestion import CongestionParams, calibrate_tau_a
from .geometry import Calibration, Homography
from .metrics import (
    AnovaResult,
    ErrorReport,
    WindowPoint,
    evaluate_run,
    one_way_anova,
    sliding_window_errors,
)
from .scene import (
    GroundTruth,
    SceneScript,
    VehicleSpec,
    WEATHER_PRESETS,
    WeatherModel,
    generate_scene,
)
from .tiers import (
    HybridPolicy,
    RunResult,
    Site,
    poll_decisions,
    run_cloud,
    run_edge,
    stitch_hybrid,
    verdict_flags,
)
from .video import VideoSpec

OUT_DIR_ENV = "TRAFFICMON_OUT"

STRATEGIES = ("edge", "cloud", "cloud_plus", "cloud_minus", "hybrid")
STRATEGY_LABELS = {
    "edge": "Edge",
    "cloud": "Cloud",
    "cloud_plus": "Cloud+",
    "cloud_minus": "Cloud-",
    "hybrid": "Hybrid",
}

# scene geometry shared by the presets: 640x360 at 0.05 m/px (32 m x 18 m)
SOURCE_VIDEO = VideoSpec(width=640, height=360, dims=3, fps=15.0)
METERS_PER_PIXEL = 0.05
REFERENTIAL_LINES_PX = (100.0, 260.0)
ROI_PX = ((80.0, 20.0), (560.0, 20.0), (560.0, 340.0), (80.0, 340.0))
ROAD_X_RANGE_M = (4.0, 28.0)
LANES_X_M = (8.0, 12.0, 16.0, 20.0, 24.0)
VEHICLE_COLORS = (
    (228, 101, 82),   # crimson
    (225, 225, 231),  # white
    (41, 44, 52),     # slate
    (238, 190, 56),   # taxi yellow
)
Y_START_M = 2.2
Y_END_M = 15.8
STOP_Y_M = 14.5  # past both referential lines, inside the ROI
SPAWN_JITTER_S = 0.3


class ConfigError(ValueError):
    """Raised when an experiment config is missing or inconsistent."""


@dataclass(frozen=True, slots=True)
class ChannelConfig:
    limit_rate_frac: float = 0.3
    limit_window_s: tuple[float, float] | None = None  # default: middle third

    def window(self, duration_s: float) -> tuple[float, float]:
        if self.limit_window_s is not None:
            return self.limit_window_s
        return (duration_s / 3.0, 2.0 * duration_s / 3.0)


@dataclass(frozen=True, slots=True)
class ControllerConfig:
    c_hat: float = 0.875
    poll_s: float = 1.0
    window_s: float = 1.0
    c_t: float = 1.0


@dataclass(frozen=True, slots=True)
class SlidingWindowConfig:
    phis: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    frac: float = 0.2
    tol: float = 0.05


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    name: str = "experiment"
    scene_preset: str = "mixed"  # free_flow | congested | mixed
    duration_s: float = 96.0
    vehicles: tuple[VehicleSpec, ...] | None = None  # overrides the preset
    weathers: tuple[str, ...] = ("sunny", "rainy", "snowy")
    strategies: tuple[str, ...] = ("edge", "cloud", "hybrid")
    seeds: tuple[int, ...] = (1, 2, 3)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    sliding: SlidingWindowConfig = field(default_factory=SlidingWindowConfig)
    out_dir: str = "results"
    weather_overrides: dict[str, WeatherModel] = field(default_factory=dict)

    def weather_model(self, name: str) -> WeatherModel:
        if name in self.weather_overrides:
            return self.weather_overrides[name]
        if name not in WEATHER_PRESETS:
            raise ConfigError(f"unknown weather {name!r}")
        return WEATHER_PRESETS[name]


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ConfigError(f"missing key {key!r} in {path}")
    return mapping[key]


def _vehicle_from_mapping(m: dict, path: str) -> VehicleSpec:
    try:
        return VehicleSpec(
            spawn_s=float(_require(m, "spawn_s", path)),
            lane_x_m=float(_require(m, "lane_x_m", path)),
            y_start_m=float(m.get("y_start_m", Y_START_M)),
            y_end_m=float(m.get("y_end_m", Y_END_M)),
            speeds=tuple((float(d), float(v))
                         for d, v in _require(m, "speeds", path)),
            width_m=float(m.get("width_m", 1.8)),
            length_m=float(m.get("length_m", 4.2)),
            color=tuple(m.get("color", VEHICLE_COLORS[0])),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad vehicle entry in {path}: {exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse a YAML experiment config; unknown keys are rejected."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping: {path}")
    known = {"name", "scene", "weathers", "strategies", "seeds", "channel",
             "controller", "sliding_window", "out_dir", "weather_models"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)} in {path}")
    scene = raw.get("scene", {})
    vehicles = None
    if "vehicles" in scene:
        vehicles = tuple(_vehicle_from_mapping(v, str(path))
                         for v in scene["vehicles"])
    chan = raw.get("channel", {})
    window = chan.get("limit_window_s")
    ctrl = raw.get("controller", {})
    slid = raw.get("sliding_window", {})
    overrides = {}
    for name, m in (raw.get("weather_models") or {}).items():
        overrides[name] = WeatherModel(
            kind=m.get("kind", name),
            density=float(m.get("density", 0.0)),
            element_px=tuple(m.get("element_px", (1, 1))),
            blur_radius=int(m.get("blur_radius", 0)),
            illumination=float(m.get("illumination", 1.0)),
            brightness=tuple(m.get("brightness", (235, 255))),
        )
    cfg = ExperimentConfig(
        name=str(raw.get("name", path.stem)),
        scene_preset=str(scene.get("preset", "mixed")),
        duration_s=float(scene.get("duration_s", 96.0)),
        vehicles=vehicles,
        weathers=tuple(raw.get("weathers", ("sunny", "rainy", "snowy"))),
        strategies=tuple(raw.get("strategies", ("edge", "cloud", "hybrid"))),
        seeds=tuple(int(s) for s in raw.get("seeds", (1, 2, 3))),
        channel=ChannelConfig(
            limit_rate_frac=float(chan.get("limit_rate_frac", 0.3)),
            limit_window_s=None if window is None else
            (float(window[0]), float(window[1])),
        ),
        controller=ControllerConfig(
            c_hat=float(ctrl.get("c_hat", 0.875)),
            poll_s=float(ctrl.get("poll_s", 1.0)),
            window_s=float(ctrl.get("window_s", 1.0)),
            c_t=float(ctrl.get("c_t", 1.0)),
        ),
        sliding=SlidingWindowConfig(
            phis=tuple(float(p) for p in
                       slid.get("phis", (0.0, 0.25, 0.5, 0.75, 1.0))),
            frac=float(slid.get("frac", 0.2)),
            tol=float(slid.get("tol", 0.05)),
        ),
        out_dir=str(raw.get("out_dir", "results")),
        weather_overrides=overrides,
    )
    for s in cfg.strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r} in {path}")
    if cfg.scene_preset not in ("free_flow", "congested", "mixed") \
            and vehicles is None:
        raise ConfigError(f"unknown scene preset {cfg.scene_preset!r} in {path}")
    return cfg


# -- scene presets -------------------------------------------------------------

def _through_vehicles(duration_s: float, gap_s: float, lanes: tuple[int, ...],
                      start_s: float = 0.5) -> list[VehicleSpec]:
    """A steady stream of non-stopping vehicles cycling lanes and colors."""
    speeds = (9.0, 8.0, 10.0, 8.5)
    out = []
    k = 0
    t = start_s
    travel = (Y_END_M - Y_START_M) / min(speeds)
    while t + travel < duration_s:
        lane = lanes[k % len(lanes)]
        out.append(VehicleSpec(
            spawn_s=round(t, 3),
            lane_x_m=LANES_X_M[lane],
            y_start_m=Y_START_M,
            y_end_m=Y_END_M,
            speeds=((duration_s, speeds[k % len(speeds)]),),
            color=VEHICLE_COLORS[k % len(VEHICLE_COLORS)],
        ))
        k += 1
        t += gap_s
    return out


def _stopper_vehicles(stop_start_s: float, dwell_s: float,
                      cruise: float = 9.0) -> list[VehicleSpec]:
    """Four vehicles that halt together past the referential lines.

    Vehicle i reaches the stop point at ``stop_start_s + 0.5 i`` and leaves
    ``dwell_s`` after the last arrival, so all four sit still for at least
    ``dwell_s`` simultaneously.
    """
    travel = (STOP_Y_M - Y_START_M) / cruise
    out = []
    for i in range(4):
        arrive = stop_start_s + 0.5 * i
        depart = stop_start_s + 1.5 + dwell_s + 0.4 * i
        out.append(VehicleSpec(
            spawn_s=round(arrive - travel, 3),
            lane_x_m=LANES_X_M[i],
            y_start_m=Y_START_M,
            y_end_m=Y_END_M,
            speeds=((travel, cruise), (round(depart - arrive, 3), 0.0)),
            color=VEHICLE_COLORS[i % len(VEHICLE_COLORS)],
        ))
    return out


def preset_vehicles(preset: str, duration_s: float) -> tuple[VehicleSpec, ...]:
    if preset == "free_flow":
        return tuple(_through_vehicles(duration_s, 4.0, (0, 1, 2, 3)))
    if preset == "congested":
        stop_start = 0.30 * duration_s
        dwell = max(14.0, 0.18 * duration_s)
        return tuple(_stopper_vehicles(stop_start, dwell)
                     + _through_vehicles(duration_s, 6.0, (4,)))
    if preset == "mixed":
        stop_start = 0.40 * duration_s
        dwell = max(14.0, 0.16 * duration_s)
        return tuple(_stopper_vehicles(stop_start, dwell)
                     + _through_vehicles(duration_s, 5.0, (4,)))
    raise ConfigError(f"unknown scene preset {preset!r}")


def build_script(cfg: ExperimentConfig, seed: int) -> SceneScript:
    """The cell's scene script: preset vehicles with seeded spawn jitter."""
    vehicles = cfg.vehicles or preset_vehicles(cfg.scene_preset, cfg.duration_s)
    rng = np.random.default_rng((seed, 17))
    jittered = tuple(
        replace(v, spawn_s=round(max(0.1, v.spawn_s +
                                     rng.uniform(-SPAWN_JITTER_S,
                                                 SPAWN_JITTER_S)), 3))
        for v in vehicles
    )
    return SceneScript(
        duration_s=cfg.duration_s,
        meters_per_pixel=METERS_PER_PIXEL,
        vehicles=jittered,
        referential_lines=REFERENTIAL_LINES_PX,
        roi=ROI_PX,
        road_x_range_m=ROAD_X_RANGE_M,
    )


def build_site(cfg: ExperimentConfig,
               homography: Homography | None = None) -> Site:
    fps = SOURCE_VIDEO.fps
    tau_a = calibrate_tau_a(1.8, 4.2, METERS_PER_PIXEL)
    site = Site(
        spec=SOURCE_VIDEO,
        calibration=Calibration(meters_per_pixel=METERS_PER_PIXEL, fps=fps,
                                lines=REFERENTIAL_LINES_PX),
        roi=ROI_PX,
        homography=homography,
        congestion=CongestionParams(tau_a=tau_a, tau_t=0),
    )
    # verdict timing: the adaptive model absorbs a stopped vehicle after
    # its absorption time, so the dwell budget left for the counter is the
    # scripted threshold minus that absorption
    tau_t = int(round((10.0 - site.zivkovic.absorption_s) * fps))
    return replace(site, congestion=CongestionParams(tau_a=tau_a, tau_t=tau_t))


def trace_for(strategy: str, cfg: ExperimentConfig,
              duration_s: float) -> LinkTrace:
    ref = reference_rate(SOURCE_VIDEO)
    limited = cfg.channel.limit_rate_frac * ref
    if strategy in ("edge", "cloud_plus"):
        return constant_trace(duration_s, ref)
    if strategy == "cloud_minus":
        return constant_trace(duration_s, limited)
    return three_segment(duration_s, ref, limited,
                         cfg.channel.window(duration_s))


@dataclass(slots=True)
class CellResult:
    weather: str
    strategy: str
    seed: int
    result: RunResult
    report: ErrorReport
    curve: list[WindowPoint]
    trace: LinkTrace


@dataclass(slots=True)
class ExperimentBundle:
    cfg: ExperimentConfig
    cells: list[CellResult]
    anovas: list[tuple[str, str, AnovaResult]]  # (factor, metric, result)


def run_cell_group(cfg: ExperimentConfig, weather: str, seed: int,
                   site: Site) -> list[CellResult]:
    """All strategies for one (weather, seed) cell on one rendered scene."""
    script = build_script(cfg, seed)
    frames, truth = generate_scene(script, SOURCE_VIDEO,
                                   cfg.weather_model(weather), seed)
    n = len(frames)
    ref = reference_rate(SOURCE_VIDEO)
    policy = HybridPolicy(c_hat=cfg.controller.c_hat,
                          poll_s=cfg.controller.poll_s,
                          window_s=cfg.controller.window_s)
    duration = n * SOURCE_VIDEO.dt

    edge_run: RunResult | None = None
    cloud_run: RunResult | None = None
    out: list[CellResult] = []
    wanted = list(cfg.strategies)
    needs_edge = "edge" in wanted or "hybrid" in wanted
    needs_cloud = "cloud" in wanted or "hybrid" in wanted
    if needs_edge:
        edge_run = run_edge(frames, site)
    if needs_cloud:
        cloud_run = run_cloud(frames, trace_for("cloud", cfg, duration),
                              site, c_t=cfg.controller.c_t)
    for strategy in wanted:
        trace = trace_for(strategy, cfg, duration)
        if strategy == "edge":
            result = edge_run
        elif strategy == "cloud":
            result = cloud_run
        elif strategy == "hybrid":
            decisions = poll_decisions(trace, duration, policy, ref)
            result = stitch_hybrid(edge_run, cloud_run, decisions, n,
                                   SOURCE_VIDEO.fps, policy.poll_s)
        else:
            result = run_cloud(frames, trace, site, c_t=cfg.controller.c_t)
        flags = verdict_flags(result.verdicts, n)
        report = evaluate_run(flags, result.reports, truth, SOURCE_VIDEO.dt)
        curve = sliding_window_errors(
            flags, result.reports, truth, trace, ref, SOURCE_VIDEO.dt,
            phi_grid=cfg.sliding.phis, window_frac=cfg.sliding.frac,
            tol=cfg.sliding.tol,
        )
        out.append(CellResult(weather, strategy, seed, result, report, trace=trace,
                              curve=curve))
    return out


def _anova_rows(cfg: ExperimentConfig,
                cells: list[CellResult]) -> list[tuple[str, str, AnovaResult]]:
    rows: list[tuple[str, str, AnovaResult]] = []

    def metric_values(group: list[CellResult], metric: str):
        vals = []
        for c in group:
            v = getattr(c.report, metric)
            if v is None:
                return None
            vals.append(v)
        return vals

    def add(factor: str, group: list[CellResult], levels: list[int]) -> None:
        if len([x for x in levels if x == 0]) < 2 or \
                len([x for x in levels if x == 1]) < 2:
            return
        for metric in ("eps_s", "eps_rms", "eps_c"):
            vals = metric_values(group, metric)
            if vals is None:
                continue
            rows.append((factor, metric, one_way_anova(levels, vals)))

    chan = [c for c in cells if c.strategy in ("cloud_plus", "cloud_minus")]
    add("bad_network", chan,
        [(1 if c.strategy == "cloud_minus" else 0) for c in chan])
    add("snowy", cells, [(1 if c.weather == "snowy" else 0) for c in cells])
    return rows


def run_experiment(cfg: ExperimentConfig) -> ExperimentBundle:
    site = build_site(cfg)
    cells: list[CellResult] = []
    for weather in cfg.weathers:
        for seed in cfg.seeds:
            cells.extend(run_cell_group(cfg, weather, seed, site))
    return ExperimentBundle(cfg=cfg, cells=cells,
                            anovas=_anova_rows(cfg, cells))


# -- report writing ------------------------------------------------------------

def resolve_out_dir(cfg: ExperimentConfig, cli_out: str | None) -> Path:
    """--out beats the environment override beats the config value."""
    if cli_out:
        return Path(cli_out)
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    return Path(cfg.out_dir)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return f"{x:.6f}"
    return str(x)


def write_results_csv(cells: list[CellResult], path: Path) -> None:
    cols = ["weather", "strategy", "seed", "eps_c", "eps_s", "eps_rms",
            "avg_speed_mph", "n_truth_events", "n_detected_events",
            "n_truth_vehicles", "n_matched", "n_missed", "n_spurious",
            "c_mean", "delivered_ratio", "frames", "pixels", "scalars"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for c in cells:
            r, res = c.report, c.result
            stream = res.stream
            w.writerow([
                c.weather, c.strategy, c.seed, _fmt(r.eps_c), _fmt(r.eps_s),
                _fmt(r.eps_rms), _fmt(r.avg_speed_mph), r.n_truth_events,
                r.n_detected_events, r.n_truth_vehicles, r.n_matched,
                r.n_missed, r.n_spurious,
                _fmt(None if stream is None else stream.c_mean),
                _fmt(None if stream is None else stream.delivered_ratio),
                res.work.frames, res.work.pixels, res.work.scalars,
            ])


def write_curves_csv(cells: list[CellResult], path: Path, dt: float) -> None:
    cols = ["weather", "strategy", "seed", "phi", "phi_achieved",
            "start_s", "reached", "eps_c", "eps_s", "eps_rms"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for c in cells:
            for p in c.curve:
                r = p.report
                w.writerow([
                    c.weather, c.strategy, c.seed, _fmt(p.phi),
                    _fmt(p.phi_achieved), _fmt(p.start_frame * dt),
                    int(p.reached),
                    _fmt(None if r is None else r.eps_c),
                    _fmt(None if r is None else r.eps_s),
                    _fmt(None if r is None else r.eps_rms),
                ])


def write_anova_csv(anovas, path: Path) -> None:
    cols = ["factor", "metric", "n0", "n1", "mean0", "mean1",
            "coefficient", "f_stat", "p_value", "degenerate"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for factor, metric, a in anovas:
            w.writerow([
                factor, metric, a.group_sizes[0], a.group_sizes[1],
                _fmt(a.group_means[0]), _fmt(a.group_means[1]),
                _fmt(a.coefficient),
                "inf" if math.isinf(a.f_stat) else _fmt(a.f_stat),
                _fmt(a.p_value), int(a.degenerate),
            ])


def write_switches_csv(cells: list[CellResult], path: Path) -> None:
    cols = ["weather", "seed", "t", "c", "beta_e"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for c in cells:
            if c.strategy != "hybrid":
                continue
            for d in c.result.decisions:
                w.writerow([c.weather, c.seed, f"{d.t:.3f}",
                            f"{d.c:.6f}", d.beta_e])


def write_summary(bundle: ExperimentBundle, path: Path) -> None:
    cfg = bundle.cfg
    by_cell: dict[tuple[str, str], list[CellResult]] = {}
    for c in bundle.cells:
        by_cell.setdefault((c.weather, c.strategy), []).append(c)
    lines = [
        f"experiment: {cfg.name}",
        f"scene: {cfg.scene_preset}, {cfg.duration_s:.0f}s at "
        f"{SOURCE_VIDEO.fps:.0f} fps, seeds {list(cfg.seeds)}",
        f"channel: limited to {cfg.channel.limit_rate_frac:.2f}x reference "
        f"during {cfg.channel.window(cfg.duration_s)}",
        "",
    ]
    for weather in cfg.weathers:
        lines.append(f"== {weather} ==")
        lines.append(f"{'scheme':8} {'eps_C':>8} {'eps_S':>8} "
                     f"{'eps_RMS':>9} {'avg mph':>9}")
        for strategy in cfg.strategies:
            group = by_cell.get((weather, strategy), [])
            if not group:
                continue
            eps_c = [c.report.eps_c for c in group if c.report.eps_c is not None]
            eps_s = [c.report.eps_s for c in group]
            eps_r = [c.report.eps_rms for c in group]
            avg = [c.report.avg_speed_mph for c in group
                   if not math.isnan(c.report.avg_speed_mph)]
            lines.append(
                f"{STRATEGY_LABELS[strategy]:8} "
                f"{np.mean(eps_c) if eps_c else float('nan'):8.4f} "
                f"{np.mean(eps_s):8.4f} {np.mean(eps_r):9.4f} "
                f"{np.mean(avg) if avg else float('nan'):9.3f}"
            )
        lines.append("")
    if bundle.anovas:
        lines.append("== one-way ANOVA ==")
        for factor, metric, a in bundle.anovas:
            p = "n/a" if a.p_value is None else f"{a.p_value:.3e}"
            lines.append(
                f"{factor} on {metric}: coefficient {a.coefficient:+.4f}, "
                f"F {a.f_stat:.3f}, p {p}"
                + (" (degenerate)" if a.degenerate else "")
            )
        lines.append("")
    path.write_text("\n".join(lines))


def write_reports(bundle: ExperimentBundle, out_dir: Path,
                  figures: bool = True) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    dt = SOURCE_VIDEO.dt
    paths = [out_dir / "results.csv", out_dir / "curves.csv",
             out_dir / "anova.csv", out_dir / "switches.csv",
             out_dir / "summary.txt"]
    write_results_csv(bundle.cells, paths[0])
    write_curves_csv(bundle.cells, paths[1], dt)
    write_anova_csv(bundle.anovas, paths[2])
    write_switches_csv(bundle.cells, paths[3])
    write_summary(bundle, paths[4])
    if figures:
        from . import plots

        paths.extend(plots.render_all(bundle, out_dir))
    return paths
