"""Processing configurations, the per-tier pipeline, and tier selection.

The cloud runs the full-resolution color pipeline on whatever frames
survive the backhaul; the edge runs the quarter-pixel intensity pipeline
on the pristine local stream. The hybrid controller polls the measured
network condition and hands each poll interval to one tier; both tiers
keep their models warm on their own view of the stream, so switching
never cold-starts a model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import (
    DegradedStream,
    LinkTrace,
    measure_condition,
    reference_rate,
    transmit,
)
from .congestion import CongestionDetector, CongestionParams, CongestionVerdict
from .geometry import Calibration, Homography, roi_mask, scale_polygon, warp_topdown
from .pixelmodels import (
    BackgroundMixture,
    GfmParams,
    GlobalForegroundModel,
    MixtureParams,
    ZivkovicModel,
    ZivkovicParams,
    detect_mask_gfm,
    enhance_mask,
)
from .speed import LinkerParams, SpeedDetector, SpeedReport, area_opening
from .video import Frame, VideoSpec, resize_area, to_intensity


@dataclass(frozen=True)
class PipelineConfig:
    name: str
    width: int
    height: int
    dims: int
    morphology: bool


CONFIG1 = PipelineConfig("Configuration-1", 640, 360, 3, True)
CONFIG2 = PipelineConfig("Configuration-2", 320, 180, 1, False)

# linker defaults in speed.LinkerParams are sized for this mask width
LINKER_BASE_WIDTH = 320


@dataclass
class WorkCounters:
    frames: int = 0
    pixels: int = 0
    scalars: int = 0


@dataclass(frozen=True)
class Site:
    """Camera geometry and detection thresholds, in source-frame pixels."""

    spec: VideoSpec                      # the captured stream
    calibration: Calibration             # meters/px, fps, referential lines
    roi: tuple[tuple[float, float], ...]
    homography: Homography | None = None
    congestion: CongestionParams | None = None
    mixture: MixtureParams = field(default_factory=MixtureParams)
    gfm: GfmParams = field(default_factory=GfmParams)
    zivkovic: ZivkovicParams = field(default_factory=ZivkovicParams)
    linker: LinkerParams = field(default_factory=LinkerParams)
    gfm_feed_cap: int = 4096


@dataclass(frozen=True)
class HybridPolicy:
    c_hat: float = 0.875
    poll_s: float = 1.0
    window_s: float = 1.0


def select_tier(c: float, policy: HybridPolicy) -> int:
    """beta_e: 1 sends the interval to the edge, 0 to the cloud."""
    return 1 if c < policy.c_hat else 0


def objective_value(beta_e: int, a_e: float, a_c: float) -> float:
    return beta_e * a_e + (1 - beta_e) * a_c


@dataclass(frozen=True)
class TierDecision:
    t: float
    c: float
    beta_e: int


@dataclass
class RunResult:
    config: str
    verdicts: list[CongestionVerdict]
    reports: list[SpeedReport]
    work: WorkCounters
    decisions: list[TierDecision] = field(default_factory=list)
    stream: DegradedStream | None = None


class Pipeline:
    """One tier's detector stack at a fixed processing configuration.

    Frames are consumed in arrival order; the pipeline's own step counter
    drives the speed math, so gaps in the arriving stream are invisible
    to it (and corrupt the estimates, which is the point). The first
    frame only initializes the models.
    """

    def __init__(self, site: Site, config: PipelineConfig):
        self.site = site
        self.config = config
        src = site.spec
        if src.width % config.width or src.height % config.height:
            raise ValueError(
                f"{config.name} {config.width}x{config.height} does not divide "
                f"source {src.width}x{src.height}"
            )
        self._resize = src.width // config.width
        if src.width // config.width != src.height // config.height:
            raise ValueError("anisotropic resize not supported")
        s = config.width / src.width
        self._scale = s
        self.calib = site.calibration.scaled(s)
        self.homography = site.homography.scaled(s) if site.homography else None
        self.roi_mask = roi_mask(config.width, config.height,
                                 scale_polygon(site.roi, s))
        cong = site.congestion
        if cong is None:
            raise ValueError("site.congestion thresholds are required to run")
        self._congestion_params = CongestionParams(
            tau_a=int(round(cong.tau_a * s * s)), tau_t=cong.tau_t,
        )
        # the congestion threshold counts three vehicle footprints; feeding
        # the global model demands a quarter footprint of novelty, far above
        # anything weather clutter assembles but below any vehicle blob
        self._feed_min_area = max(1, self._congestion_params.tau_a // 12)
        self.bg = BackgroundMixture(config.height, config.width, config.dims,
                                    site.mixture)
        self.gfm = GlobalForegroundModel(config.dims, site.gfm)
        self.ziv = ZivkovicModel(config.height, config.width, config.dims,
                                 src.fps, site.zivkovic)
        self.congestion = CongestionDetector(self._congestion_params, self.roi_mask)
        self.linker = site.linker.scaled(config.width / LINKER_BASE_WIDTH)
        self.speed = SpeedDetector(self.calib, self.linker)
        self.work = WorkCounters()
        self._steps = 0
        # bootstrap frame + the frames a settled pixel needs before its
        # components count as established background
        self._feed_warmup = 1 + site.mixture.establish_frames
        self._prev_seed = np.zeros((config.height, config.width), dtype=bool)

    def _prepare(self, frame: Frame) -> np.ndarray:
        px = frame.pixels
        if self._resize > 1:
            px = resize_area(px, self.config.width, self.config.height)
        if self.config.dims == 1 and px.shape[2] == 3:
            px = to_intensity(px)
        if self.homography is not None:
            px = warp_topdown(px, self.homography,
                              self.config.width, self.config.height)
        return np.ascontiguousarray(px)

    def step(self, frame: Frame) -> CongestionVerdict:
        px = self._prepare(frame)
        self.work.frames += 1
        self.work.pixels += self.config.width * self.config.height
        self.work.scalars += self.config.width * self.config.height * self.config.dims
        if self._steps == 0:
            # bootstrap: models learn the first view, nothing is classified
            self._steps += 1
            self.bg.update(px)
            self.ziv.update(px)
            zeros = np.zeros((self.config.height, self.config.width), dtype=bool)
            self.speed.step(zeros, frame.index)
            return self.congestion.step(zeros, zeros, frame=frame.index)
        self._steps += 1
        mask, seed = detect_mask_gfm(self.bg, self.gfm, px)
        z = self.ziv.step(px)
        # train the global model on persistent, object-sized novelty:
        # pixels seeding two frames running, in connected components of at
        # least a quarter vehicle footprint. Object seeds persist (their
        # background support never establishes under the mask) and arrive
        # in solid footprint-scale blobs; weather clutter seeds briefly on
        # scattered pixels, so the persistence and area gates strip it.
        # The Bayes mask never feeds back into the model it drives: a
        # false-positive region would teach it background colors. Nothing
        # feeds until the background mixtures have had time to establish;
        # against a young model every transient reads as novel.
        novel = seed & self._prev_seed
        self._prev_seed = seed
        if self._steps > self._feed_warmup:
            feed = px[area_opening(novel, self._feed_min_area)]
            if len(feed) > self.site.gfm_feed_cap:
                stride = -(-len(feed) // self.site.gfm_feed_cap)
                feed = feed[::stride]
            if len(feed):
                self.gfm.update_batch(feed)
        self.bg.update(px, update_mask=~mask)
        m = enhance_mask(mask) if self.config.morphology else mask
        self.speed.step(m, frame.index)
        return self.congestion.step(m, z, frame=frame.index)

    def finish(self) -> RunResult:
        self.speed.finish()
        # report lane positions in source pixel coordinates so results from
        # different processing configurations are directly comparable
        reports = [replace(r, mean_x=r.mean_x / self._scale)
                   for r in self.speed.reports]
        return RunResult(
            config=self.config.name,
            verdicts=self.congestion.verdicts,
            reports=reports,
            work=self.work,
        )


def run_edge(frames: list[Frame], site: Site) -> RunResult:
    pipe = Pipeline(site, CONFIG2)
    for fr in frames:
        pipe.step(fr)
    return pipe.finish()


def run_cloud(frames: list[Frame], trace: LinkTrace, site: Site,
              c_t: float = 1.0) -> RunResult:
    spec = site.spec
    stream = transmit(frames, trace, spec.frame_bytes, spec.dt,
                      reference_rate(spec), c_t=c_t)
    pipe = Pipeline(site, CONFIG1)
    for fr in stream.frames:
        pipe.step(fr)
    result = pipe.finish()
    result.stream = stream
    return result


def poll_decisions(trace: LinkTrace, duration_s: float, policy: HybridPolicy,
                   reference: float) -> list[TierDecision]:
    decisions = []
    n_polls = int(math.ceil(duration_s / policy.poll_s))
    for k in range(n_polls):
        t = k * policy.poll_s
        c = measure_condition(trace, t, policy.window_s, reference)
        decisions.append(TierDecision(t=t, c=c, beta_e=select_tier(c, policy)))
    return decisions


def fill_verdicts(verdicts: list[CongestionVerdict],
                   n_frames: int) -> list[CongestionVerdict]:
    """Per-source-frame verdict view of a stream with holes: the receiver
    keeps its last verdict until the next frame arrives."""
    filled = []
    last = None
    it = iter(verdicts)
    nxt = next(it, None)
    for i in range(n_frames):
        while nxt is not None and nxt.frame <= i:
            last = nxt
            nxt = next(it, None)
        if last is None:
            filled.append(CongestionVerdict(frame=i, area_px=0, t_c=0,
                                            congested=False))
        else:
            filled.append(CongestionVerdict(frame=i, area_px=last.area_px,
                                            t_c=last.t_c,
                                            congested=last.congested))
    return filled


def verdict_flags(verdicts: list[CongestionVerdict],
                  n_frames: int) -> np.ndarray:
    """Boolean congestion series over all source frames, holes held over."""
    return np.array([v.congested for v in fill_verdicts(verdicts, n_frames)],
                    dtype=bool)


def stitch_hybrid(edge: RunResult, cloud: RunResult,
                  decisions: list[TierDecision], n_frames: int,
                  fps: float, poll_s: float,
                  lane_tol_px: float = 40.0) -> RunResult:
    """Combine per-tier outputs into the hybrid series.

    Each source frame belongs to the poll interval covering its capture
    time; verdicts come from the active tier (the cloud's view held over
    dropped frames). Speed reports from the two tiers that overlap in
    time and lane describe the same vehicle, so they are clustered and
    exactly one per cluster survives: the one from the tier that was
    active at its measurement instant, falling back to the earliest.
    Attribution alone would drop a vehicle whose reports straddle a
    switch in both directions.
    """
    beta = np.zeros(n_frames, dtype=np.int8)
    for i in range(n_frames):
        k = min(int((i / fps) / poll_s), len(decisions) - 1)
        beta[i] = decisions[k].beta_e
    edge_v = fill_verdicts(edge.verdicts, n_frames)
    cloud_v = fill_verdicts(cloud.verdicts, n_frames)
    verdicts = [edge_v[i] if beta[i] else cloud_v[i] for i in range(n_frames)]

    tagged = [(1, r) for r in edge.reports] + [(0, r) for r in cloud.reports]
    parent = list(range(len(tagged)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(tagged)):
        _, a = tagged[i]
        for j in range(i + 1, len(tagged)):
            _, b = tagged[j]
            if a.first_frame <= b.last_frame and b.first_frame <= a.last_frame \
                    and abs(a.mean_x - b.mean_x) <= lane_tol_px:
                parent[find(i)] = find(j)
    clusters: dict[int, list[tuple[int, SpeedReport]]] = {}
    for i, item in enumerate(tagged):
        clusters.setdefault(find(i), []).append(item)
    reports = []
    for members in clusters.values():
        def active(item: tuple[int, SpeedReport]) -> bool:
            tier, rep = item
            return beta[min(rep.anchor_frame(), n_frames - 1)] == tier

        members.sort(key=lambda it: (not active(it), it[1].first_frame,
                                     -it[0], it[1].trajectory_id))
        reports.append(members[0][1])
    reports.sort(key=lambda r: (r.first_frame, r.trajectory_id))
    work = WorkCounters(
        frames=edge.work.frames + cloud.work.frames,
        pixels=edge.work.pixels + cloud.work.pixels,
        scalars=edge.work.scalars + cloud.work.scalars,
    )
    return RunResult(config="hybrid", verdicts=verdicts, reports=reports,
                     work=work, decisions=list(decisions), stream=cloud.stream)


def run_hybrid(frames: list[Frame], trace: LinkTrace, site: Site,
               policy: HybridPolicy | None = None,
               c_t: float = 1.0) -> RunResult:
    policy = policy or HybridPolicy()
    edge = run_edge(frames, site)
    cloud = run_cloud(frames, trace, site, c_t=c_t)
    duration = len(frames) * site.spec.dt
    decisions = poll_decisions(trace, duration, policy,
                               reference_rate(site.spec))
    return stitch_hybrid(edge, cloud, decisions, len(frames),
                         site.spec.fps, policy.poll_s)


def write_switch_csv(decisions: list[TierDecision], path) -> None:
    with open(path, "w") as fh:
        fh.write("t,c,beta_e\n")
        for d in decisions:
            fh.write(f"{d.t:.3f},{d.c:.6f},{d.beta_e}\n")
