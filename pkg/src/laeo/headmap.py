"""Render the 64x64 three-channel head position map for a frame.

Each head becomes an unnormalized 2D Gaussian (peak 1) at its box center,
with sigma proportional to its width. Channel 0 holds the left target head,
channel 1 the right target head, channel 2 every remaining head in the
frame, so the network can tell when a bystander sits between the pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BoundingBox, GeometryTuple

MAP_SIZE = 64

# Gaussians are cut off beyond this many sigmas; tiny tail values are zeroed.
_TRUNCATE_SIGMAS = 3.0
_TAIL_EPS = 1e-4


@dataclass(frozen=True)
class HeadMapSpec:
    """Rendering parameters. sigma_factor scales the Gaussian width as a
    fraction of the head's width in map coordinates."""

    map_size: int = MAP_SIZE
    sigma_factor: float = 0.5

    def __post_init__(self):
        if self.map_size != MAP_SIZE:
            raise ValueError(f"map size is fixed at {MAP_SIZE}, got {self.map_size}")
        if not self.sigma_factor > 0.0:
            raise ValueError("sigma_factor must be positive")


def _splat_gaussian(channel: np.ndarray, cx: float, cy: float, sigma: float) -> None:
    size = channel.shape[0]
    reach = _TRUNCATE_SIGMAS * sigma
    x_lo = max(0, int(np.floor(cx - reach)))
    x_hi = min(size, int(np.ceil(cx + reach)) + 1)
    y_lo = max(0, int(np.floor(cy - reach)))
    y_hi = min(size, int(np.ceil(cy + reach)) + 1)
    if x_lo >= x_hi or y_lo >= y_hi:
        return
    xs = np.arange(x_lo, x_hi, dtype=np.float64)
    ys = np.arange(y_lo, y_hi, dtype=np.float64)
    d2 = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2
    g = np.exp(-d2 / (2.0 * sigma * sigma))
    g[g < _TAIL_EPS] = 0.0
    channel[y_lo:y_hi, x_lo:x_hi] += g


def render_head_map(
    all_heads: Sequence[BoundingBox],
    left_idx: int,
    right_idx: int,
    frame_size: tuple[float, float],
    spec: HeadMapSpec = HeadMapSpec(),
    frame_origin: tuple[float, float] = (0.0, 0.0),
) -> np.ndarray:
    """Render the position map for the target pair among all detected heads.

    Heads are those present in the central frame of the pair's window; the
    map covers the full frame, scaled down to map coordinates.

    Args:
        all_heads: Every head box in the central frame, target pair included.
        left_idx: Index of the left target head in all_heads.
        right_idx: Index of the right target head.
        frame_size: (width, height) of the source frame in pixels.
        spec: Gaussian rendering parameters.
        frame_origin: (x, y) of the frame's top-left corner, for callers whose
            boxes live in a shifted coordinate system.

    Returns:
        (64, 64, 3) float64 map, every value in [0, 1]. Overlapping Gaussians
        within a channel are summed, then the channel is clipped to [0, 1].
    """
    n = len(all_heads)
    if not (0 <= left_idx < n and 0 <= right_idx < n):
        raise IndexError(f"target indices ({left_idx}, {right_idx}) out of range for {n} heads")
    if left_idx == right_idx:
        raise ValueError("left and right target must be different heads")

    fw, fh = frame_size
    ox, oy = frame_origin
    size = spec.map_size
    out = np.zeros((size, size, 3), dtype=np.float64)

    for i, head in enumerate(all_heads):
        cx, cy = head.center
        mx = (cx - ox) / fw * size
        my = (cy - oy) / fh * size
        sigma = spec.sigma_factor * (head.width / fw * size)
        if i == left_idx:
            channel = 0
        elif i == right_idx:
            channel = 1
        else:
            channel = 2
        _splat_gaussian(out[:, :, channel], mx, my, sigma)

    np.clip(out, 0.0, 1.0, out=out)
    return out


def geometry_tuple(
    left: BoundingBox, right: BoundingBox, frame_size: tuple[float, float]
) -> GeometryTuple:
    """Displacement (left center to right center, frame-normalized) and the
    left/right width ratio."""
    fw, fh = frame_size
    lx, ly = left.center
    rx, ry = right.center
    return GeometryTuple(
        dx=(rx - lx) / fw,
        dy=(ry - ly) / fh,
        scale_ratio=left.width / right.width,
    )
