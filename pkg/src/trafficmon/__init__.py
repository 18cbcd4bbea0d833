"""Two-tier traffic monitoring test bed.

A camera-side (edge) and server-side (cloud) video analytics pipeline pair
with foreground modeling, vehicle speed and congestion detection, a
bandwidth-limited channel simulator, a tier selection policy, and an
evaluation harness that reports error metrics as CSV plus rendered figures.
"""

__version__ = "0.1.0"

from .video import Frame, VideoSpec, load_raw_sequence, write_raw_sequence

__all__ = [
    "Frame",
    "VideoSpec",
    "load_raw_sequence",
    "write_raw_sequence",
    "__version__",
]
