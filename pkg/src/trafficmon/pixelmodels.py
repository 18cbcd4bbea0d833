"""Foreground detection: per-pixel background mixtures plus a global model.

Two detectors share the input stream:

* the Bayes-rule mask, where each pixel compares its top background
  component (prior w1) against the best global foreground component
  (prior 1 - w1); the global model keeps temporarily stopped objects
  foreground as long as their colors stay in it;
* the adaptive-mixture mask, which absorbs anything static for longer than
  the configured absorption time into the background.

The difference of the two masks is what the congestion detector consumes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels

LOG_TWO_PI = _kernels.LOG_TWO_PI

_STATE_MAGIC = b"TTMS"
_STATE_VERSION = 1


@dataclass(frozen=True, slots=True)
class MixtureParams:
    """Per-pixel background mixture settings.

    ``established_weight`` is the weight a component needs before it
    counts as settled background; novelty seeding ignores components
    below it, so a just-spawned component (weight = learning_rate)
    cannot mask novelty until it has been confirmed for roughly
    log(1 - established_weight) / log(1 - learning_rate) frames.
    """

    k: int = 4
    learning_rate: float = 0.01
    match_sigma: float = 2.5
    variance_floor: float = 4.0
    initial_variance: float = 100.0
    established_weight: float = 0.1

    @property
    def match_sq(self) -> float:
        return self.match_sigma * self.match_sigma

    @property
    def establish_frames(self) -> int:
        """Matched frames a fresh component needs to become established."""
        return math.ceil(math.log(1.0 - self.established_weight)
                         / math.log(1.0 - self.learning_rate))


@dataclass(frozen=True, slots=True)
class GfmParams:
    """Global foreground model settings."""

    capacity: int = 20
    learning_rate: float = 0.01
    creation_sigma: float = 3.0
    variance_floor: float = 4.0
    initial_variance: float = 100.0

    @property
    def creation_sq(self) -> float:
        return self.creation_sigma * self.creation_sigma


@dataclass(frozen=True, slots=True)
class ZivkovicParams:
    """Adaptive mixture settings; the learning rate is derived from the
    absorption time: a static object joins the background set once the
    previous background weight decays below ``background_fraction``."""

    k: int = 4
    absorption_s: float = 1.5
    background_fraction: float = 0.5
    bias: float = 0.01
    match_sigma: float = 2.5
    variance_floor: float = 4.0
    initial_variance: float = 100.0

    @property
    def match_sq(self) -> float:
        return self.match_sigma * self.match_sigma

    def alpha(self, fps: float) -> float:
        n = max(self.absorption_s * fps, 1.0)
        return 1.0 - self.background_fraction ** (1.0 / n)


def _alloc(h: int, w: int, k: int, d: int, init_var: float):
    means = np.zeros((h, w, k, d), dtype=np.float32)
    variances = np.full((h, w, k, d), init_var, dtype=np.float32)
    weights = np.zeros((h, w, k), dtype=np.float32)
    counts = np.zeros((h, w), dtype=np.uint8)
    return means, variances, weights, counts


class BackgroundMixture:
    """Per-pixel K-component background model, components sorted by weight."""

    def __init__(self, height: int, width: int, dims: int, params: MixtureParams | None = None):
        self.params = params or MixtureParams()
        self.height, self.width, self.dims = height, width, dims
        self.means, self.variances, self.weights, self.counts = _alloc(
            height, width, self.params.k, dims, self.params.initial_variance
        )

    def update(self, pixels: np.ndarray, update_mask: np.ndarray | None = None) -> None:
        """EMA step; pixels where ``update_mask`` is False keep their state."""
        if update_mask is None:
            update_mask = np.ones((self.height, self.width), dtype=np.uint8)
        p = self.params
        _kernels.gmm_update(
            pixels, self.weights, self.means, self.variances, self.counts,
            np.ascontiguousarray(update_mask, dtype=np.uint8),
            p.learning_rate, p.match_sq, p.initial_variance, p.variance_floor,
            p.learning_rate,
        )

    def background_density(self, x, i: int, j: int) -> tuple[float, float]:
        """Density of the top component at pixel (i, j) and its prior w1."""
        if self.counts[i, j] == 0:
            return 0.0, 0.0
        q = 0.0
        logdet = 0.0
        for dd in range(self.dims):
            diff = float(x[dd]) - float(self.means[i, j, 0, dd])
            q += diff * diff / float(self.variances[i, j, 0, dd])
            logdet += math.log(float(self.variances[i, j, 0, dd]))
        logp = -0.5 * q - 0.5 * self.dims * LOG_TWO_PI - 0.5 * logdet
        return math.exp(logp), float(self.weights[i, j, 0])

    def to_bytes(self) -> bytes:
        head = struct.pack("<4I", self.height, self.width, self.params.k, self.dims)
        return head + self.counts.tobytes() + self.weights.tobytes() + \
            self.means.tobytes() + self.variances.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, params: MixtureParams | None = None) -> "BackgroundMixture":
        h, w, k, d = struct.unpack_from("<4I", blob, 0)
        params = params or MixtureParams(k=k)
        if params.k != k:
            raise ValueError(f"blob has K={k}, params say K={params.k}")
        model = cls(h, w, d, params)
        off = 16
        for arr in (model.counts, model.weights, model.means, model.variances):
            n = arr.nbytes
            flat = np.frombuffer(blob, dtype=arr.dtype, count=arr.size, offset=off)
            arr[...] = flat.reshape(arr.shape)
            off += n
        return model


class ZivkovicModel:
    """Adaptive-K background mixture with stationary-object absorption."""

    def __init__(self, height: int, width: int, dims: int, fps: float,
                 params: ZivkovicParams | None = None):
        self.params = params or ZivkovicParams()
        self.height, self.width, self.dims = height, width, dims
        self.fps = fps
        self.alpha = self.params.alpha(fps)
        self.means, self.variances, self.weights, self.counts = _alloc(
            height, width, self.params.k, dims, self.params.initial_variance
        )

    @property
    def bg_cum(self) -> float:
        return 1.0 - self.params.background_fraction

    def classify(self, pixels: np.ndarray) -> np.ndarray:
        mask = np.empty((self.height, self.width), dtype=np.uint8)
        _kernels.ziv_classify(
            pixels, self.weights, self.means, self.variances, self.counts,
            self.params.match_sq, self.bg_cum, mask,
        )
        return mask.astype(bool)

    def update(self, pixels: np.ndarray) -> None:
        p = self.params
        _kernels.ziv_update(
            pixels, self.weights, self.means, self.variances, self.counts,
            self.alpha, p.bias, p.match_sq, p.initial_variance, p.variance_floor,
        )

    def step(self, pixels: np.ndarray) -> np.ndarray:
        """Classify against the current state, then update. Returns the mask."""
        p = self.params
        mask = np.empty((self.height, self.width), dtype=np.uint8)
        _kernels.ziv_step(
            pixels, self.weights, self.means, self.variances, self.counts,
            self.alpha, p.bias, p.match_sq, p.initial_variance, p.variance_floor,
            self.bg_cum, mask,
        )
        return mask.astype(bool)

    def to_bytes(self) -> bytes:
        head = struct.pack("<4I", self.height, self.width, self.params.k, self.dims)
        return head + self.counts.tobytes() + self.weights.tobytes() + \
            self.means.tobytes() + self.variances.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, fps: float, params: ZivkovicParams | None = None) -> "ZivkovicModel":
        h, w, k, d = struct.unpack_from("<4I", blob, 0)
        params = params or ZivkovicParams(k=k)
        if params.k != k:
            raise ValueError(f"blob has K={k}, params say K={params.k}")
        model = cls(h, w, d, fps, params)
        off = 16
        for arr in (model.counts, model.weights, model.means, model.variances):
            flat = np.frombuffer(blob, dtype=arr.dtype, count=arr.size, offset=off)
            arr[...] = flat.reshape(arr.shape)
            off += arr.nbytes
        return model


class GlobalForegroundModel:
    """Shared foreground mixture over all pixels (colors of moving objects)."""

    def __init__(self, dims: int, params: GfmParams | None = None):
        self.params = params or GfmParams()
        self.dims = dims
        cap = self.params.capacity
        self.means = np.zeros((cap, dims), dtype=np.float32)
        self.variances = np.full((cap, dims), self.params.initial_variance, dtype=np.float32)
        self.weights = np.zeros(cap, dtype=np.float32)
        self.logdet = np.zeros(cap, dtype=np.float64)
        self.count = 0

    def update_batch(self, xs: np.ndarray) -> None:
        """Feed foreground samples (m, dims) in row-major pixel order."""
        if len(xs) == 0:
            return
        p = self.params
        self.count = int(_kernels.gfm_update(
            np.ascontiguousarray(xs, dtype=np.uint8).reshape(-1, self.dims),
            self.weights, self.means, self.variances, self.logdet,
            self.count, p.capacity, p.learning_rate, p.creation_sq,
            p.initial_variance, p.variance_floor,
        ))

    def update(self, x) -> None:
        """Feed one foreground sample."""
        self.update_batch(np.asarray(x, dtype=np.uint8).reshape(1, self.dims))

    def to_bytes(self) -> bytes:
        head = struct.pack("<3I", self.params.capacity, self.dims, self.count)
        return head + self.weights.tobytes() + self.means.tobytes() + \
            self.variances.tobytes() + self.logdet.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, params: GfmParams | None = None) -> "GlobalForegroundModel":
        cap, d, count = struct.unpack_from("<3I", blob, 0)
        params = params or GfmParams(capacity=cap)
        if params.capacity != cap:
            raise ValueError(f"blob has capacity {cap}, params say {params.capacity}")
        model = cls(d, params)
        model.count = count
        off = 12
        for arr in (model.weights, model.means, model.variances, model.logdet):
            flat = np.frombuffer(blob, dtype=arr.dtype, count=arr.size, offset=off)
            arr[...] = flat.reshape(arr.shape)
            off += arr.nbytes
        return model


def detect_mask_gfm(
    bg: BackgroundMixture, gfm: GlobalForegroundModel, pixels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Bayes-rule foreground mask, plus the mask of high-residual pixels
    (no established background component within the match radius) that
    seed the global model. Pure classification; models are not modified."""
    h, w = bg.height, bg.width
    mask = np.empty((h, w), dtype=np.uint8)
    seed = np.empty((h, w), dtype=np.uint8)
    # per-frame constants of the frozen global model: log w and log w - logdet/2
    glogw = np.full(gfm.params.capacity, -np.inf, dtype=np.float64)
    live = gfm.weights[: gfm.count].astype(np.float64)
    with np.errstate(divide="ignore"):
        glogw[: gfm.count] = np.log(live)
    gconst = glogw - 0.5 * gfm.logdet
    _kernels.classify_gfm(
        pixels, bg.weights, bg.means, bg.variances, bg.counts,
        gfm.means, gfm.variances, gfm.count, gconst, glogw,
        bg.params.match_sq, bg.params.established_weight, mask, seed,
    )
    return mask.astype(bool), seed.astype(bool)


def detect_mask_zivkovic(model: ZivkovicModel, pixels: np.ndarray) -> np.ndarray:
    """Adaptive-mixture foreground mask. Pure classification."""
    return model.classify(pixels)


# -- morphology ---------------------------------------------------------------

def _erode(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask, 1, constant_values=False)
    out = p[1:-1, 1:-1].copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            out &= p[1 + dy : p.shape[0] - 1 + dy, 1 + dx : p.shape[1] - 1 + dx]
    return out


def _dilate(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask, 1, constant_values=False)
    out = p[1:-1, 1:-1].copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            out |= p[1 + dy : p.shape[0] - 1 + dy, 1 + dx : p.shape[1] - 1 + dx]
    return out


def enhance_mask(mask: np.ndarray) -> np.ndarray:
    """3x3 opening (kills speckles) then 3x3 closing (fills small holes)."""
    opened = _dilate(_erode(mask))
    return _erode(_dilate(opened))


# -- checkpointing ------------------------------------------------------------

def save_state(path, bg: BackgroundMixture, gfm: GlobalForegroundModel,
               ziv: ZivkovicModel) -> None:
    """Serialize all model state to a versioned binary checkpoint."""
    parts = [bg.to_bytes(), gfm.to_bytes(), ziv.to_bytes()]
    with open(path, "wb") as fh:
        fh.write(_STATE_MAGIC)
        fh.write(struct.pack("<I", _STATE_VERSION))
        fh.write(struct.pack("<d", ziv.fps))
        for part in parts:
            fh.write(struct.pack("<Q", len(part)))
            fh.write(part)


def load_state(path) -> tuple[BackgroundMixture, GlobalForegroundModel, ZivkovicModel]:
    blob = open(path, "rb").read()
    if blob[:4] != _STATE_MAGIC:
        raise ValueError(f"bad checkpoint magic {blob[:4]!r} at byte offset 0")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != _STATE_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    fps = struct.unpack_from("<d", blob, 8)[0]
    off = 16
    parts = []
    for _ in range(3):
        n = struct.unpack_from("<Q", blob, off)[0]
        off += 8
        parts.append(blob[off : off + n])
        off += n
    bg = BackgroundMixture.from_bytes(parts[0])
    gfm = GlobalForegroundModel.from_bytes(parts[1])
    ziv = ZivkovicModel.from_bytes(parts[2], fps)
    return bg, gfm, ziv
