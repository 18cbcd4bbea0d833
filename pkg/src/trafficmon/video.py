"""Frame container and raw video sequence I/O.

Sequences are stored uncompressed in a small custom container (magic
``TTFV``) so runs are bit-reproducible and free of codec dependencies:

    offset  size  field
    0       4     magic ``b"TTFV"``
    4       4     width   (u32 LE)
    8       4     height  (u32 LE)
    12      4     channel count d, 1 or 3 (u32 LE)
    16      4     fps numerator   (u32 LE)
    20      4     fps denominator (u32 LE)
    24      4     frame count     (u32 LE)
    28      ...   frames in index order, planar by channel,
                  row-major uint8, height*width bytes per plane

Masks are dumped as binary PGM (P5), 0 = background, 255 = foreground.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

_MAGIC = b"TTFV"
_HEADER = struct.Struct("<4s6I")


class FormatError(ValueError):
    """Raised for malformed sequence files; message names the byte offset."""


@dataclass(frozen=True, slots=True)
class VideoSpec:
    """Resolution, channel count and frame rate of a sequence."""

    width: int
    height: int
    dims: int = 3
    fps: float = 15.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"resolution must be positive, got {self.width}x{self.height}")
        if self.dims not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {self.dims}")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    @property
    def frame_bytes(self) -> int:
        return self.width * self.height * self.dims


@dataclass(slots=True)
class Frame:
    """One video frame; ``pixels`` has shape (height, width, dims) uint8."""

    index: int
    t: float
    pixels: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape  # type: ignore[return-value]


def write_raw_sequence(path: str | Path, frames: list[Frame], spec: VideoSpec) -> None:
    """Write frames to a TTFV container. Frames must match ``spec``."""
    fps = Fraction(spec.fps).limit_denominator(1_000_000)
    header = _HEADER.pack(
        _MAGIC, spec.width, spec.height, spec.dims,
        fps.numerator, fps.denominator, len(frames),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for fr in frames:
            if fr.pixels.shape != (spec.height, spec.width, spec.dims):
                raise ValueError(
                    f"frame {fr.index} shape {fr.pixels.shape} does not match spec "
                    f"({spec.height}, {spec.width}, {spec.dims})"
                )
            # planar by channel, row-major
            fh.write(np.ascontiguousarray(fr.pixels.transpose(2, 0, 1), dtype=np.uint8).tobytes())


def load_raw_sequence(path: str | Path) -> tuple[VideoSpec, list[Frame]]:
    """Read a TTFV container back into (spec, frames)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"truncated header: file is {len(raw)} bytes, need {_HEADER.size} (at byte offset {len(raw)})")
    magic, width, height, dims, fps_num, fps_den, count = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte offset 0, expected {_MAGIC!r}")
    if dims not in (1, 3):
        raise FormatError(f"bad channel count {dims} at byte offset 12")
    if fps_den == 0 or fps_num == 0:
        raise FormatError("bad frame rate at byte offset 16")
    spec = VideoSpec(width=width, height=height, dims=dims, fps=fps_num / fps_den)
    plane = width * height
    need = _HEADER.size + count * plane * dims
    if len(raw) != need:
        # offset of the first missing / first excess byte
        off = min(len(raw), need)
        raise FormatError(
            f"payload size mismatch at byte offset {off}: have {len(raw)} bytes, expected {need} "
            f"for {count} frames of {plane * dims} bytes"
        )
    dt = spec.dt
    frames = []
    for i in range(count):
        start = _HEADER.size + i * plane * dims
        px = np.frombuffer(raw, dtype=np.uint8, count=plane * dims, offset=start)
        px = px.reshape(dims, height, width).transpose(1, 2, 0).copy()
        frames.append(Frame(index=i, t=i * dt, pixels=px))
    return spec, frames


def resize_area(pixels: np.ndarray, out_width: int, out_height: int) -> np.ndarray:
    """Area-averaging downscale by integer factors (e.g. 640x360 -> 320x180).

    Each output pixel is the mean of its input block, rounded half-to-even.
    """
    h, w = pixels.shape[:2]
    if w % out_width or h % out_height:
        raise ValueError(f"target {out_width}x{out_height} must divide source {w}x{h}")
    fx, fy = w // out_width, h // out_height
    if fx == 1 and fy == 1:
        return pixels.copy()
    d = pixels.shape[2]
    blocks = pixels.reshape(out_height, fy, out_width, fx, d).astype(np.float64)
    mean = blocks.mean(axis=(1, 3))
    return np.rint(mean).astype(np.uint8)


def to_intensity(pixels: np.ndarray) -> np.ndarray:
    """Collapse RGB to a single intensity channel: round((R+G+B)/3)."""
    if pixels.shape[2] == 1:
        return pixels.copy()
    s = pixels.astype(np.int32).sum(axis=2, keepdims=True)
    return np.rint(s / 3.0).astype(np.uint8)


def write_pgm(mask: np.ndarray, path: str | Path) -> None:
    """Dump a binary mask as PGM (P5), foreground = 255."""
    h, w = mask.shape
    data = (mask.astype(np.uint8) * 255) if mask.dtype == bool else mask.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) PGM written by :func:`write_pgm`. Returns bool mask."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise FormatError("not a binary PGM (P5) file (at byte offset 0)")
    # header = magic, width, height, maxval separated by whitespace
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"truncated PGM header at byte offset {pos}")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval > 255:
        raise FormatError("16-bit PGM not supported")
    if len(raw) - pos < w * h:
        raise FormatError(f"truncated PGM payload at byte offset {len(raw)}")
    img = np.frombuffer(raw, np.uint8, count=w * h, offset=pos).reshape(h, w)
    return img > 0
