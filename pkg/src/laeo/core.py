"""Shared domain types and box geometry primitives.

Everything here is an immutable value object: safe to share across
worker processes without locking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CROP_SIZE = 64

LABEL_NOT_LAEO = 0
LABEL_LAEO = 1


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in image coordinates (origin top-left), float pixels.

    Corner form (x1, y1, x2, y2) with x2 > x1 and y2 > y1. Annotation files
    that use (x, y, w, h) are converted at ingestion.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box {self!r}: need x2 > x1 and y2 > y1")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BoundingBox":
        return cls(x, y, x + w, y + h)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def translated(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


def _intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    return ix * iy


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    inter = _intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def intersection_over_head_area(head: BoundingBox, body: BoundingBox) -> float:
    """Intersection area divided by the head's own area.

    Used when ground truth provides whole-person boxes: a head fully inside
    the annotated body scores 1 regardless of the body box size.
    """
    return _intersection_area(head, body) / head.area


@dataclass(frozen=True)
class HeadDetection:
    """A single-frame head detection with confidence score in [0, 1]."""

    frame_index: int
    box: BoundingBox
    score: float

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"negative frame index {self.frame_index}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class HeadTrack:
    """One person's head boxes over a run of consecutive frames.

    Attributes:
        track_id: Identifier unique within one linking run.
        start_frame: First frame of the track.
        boxes: One box per frame, no gaps (missed frames are interpolated).
        per_frame_scores: Detection score per frame (interpolated frames get
            interpolated scores).
        interpolated_mask: True where the box was filled in rather than
            matched to a detection.
    """

    track_id: int
    start_frame: int
    boxes: tuple[BoundingBox, ...]
    per_frame_scores: tuple[float, ...]
    interpolated_mask: tuple[bool, ...]

    def __post_init__(self):
        n = len(self.boxes)
        if n < 1:
            raise ValueError("track must cover at least one frame")
        if len(self.per_frame_scores) != n or len(self.interpolated_mask) != n:
            raise ValueError("boxes, scores and interpolated mask must have equal length")

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def end_frame(self) -> int:
        """Last frame covered (inclusive)."""
        return self.start_frame + len(self.boxes) - 1

    @property
    def score(self) -> float:
        """Mean score over matched (non-interpolated) frames."""
        matched = [s for s, interp in zip(self.per_frame_scores, self.interpolated_mask) if not interp]
        if not matched:
            return float(np.mean(self.per_frame_scores))
        return float(np.mean(matched))

    def covers(self, frame: int) -> bool:
        return self.start_frame <= frame <= self.end_frame

    def box_at(self, frame: int) -> BoundingBox:
        if not self.covers(frame):
            raise KeyError(f"track {self.track_id} does not cover frame {frame}")
        return self.boxes[frame - self.start_frame]


@dataclass(frozen=True)
class PoseAngles:
    """Head orientation as (yaw, pitch, roll) in radians, each in [-pi, pi].

    Yaw is rotation about the vertical axis (positive turns the face toward
    image +x), pitch about the lateral axis (positive looks up), roll the
    in-plane tilt.
    """

    yaw: float
    pitch: float
    roll: float

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            v = getattr(self, name)
            if not -math.pi <= v <= math.pi:
                raise ValueError(f"{name}={v} outside [-pi, pi]")

    def normalized(self) -> np.ndarray:
        """Angles divided by pi, each in [-1, 1]; the unit used by the losses."""
        return np.array([self.yaw, self.pitch, self.roll], dtype=np.float64) / math.pi

    @classmethod
    def from_normalized(cls, triple) -> "PoseAngles":
        y, p, r = (float(v) * math.pi for v in triple)
        return cls(y, p, r)


@dataclass(frozen=True)
class GeometryTuple:
    """Relative placement of a head pair in a (1, 1)-normalized frame.

    dx, dy point from the left head center to the right head center;
    scale_ratio is left head width over right head width.
    """

    dx: float
    dy: float
    scale_ratio: float

    def __post_init__(self):
        if not self.scale_ratio > 0.0:
            raise ValueError(f"scale_ratio must be positive, got {self.scale_ratio}")

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.scale_ratio], dtype=np.float64)


@dataclass(frozen=True)
class TrackPairSample:
    """Network input for one head pair over a fixed-length frame window.

    Attributes:
        left_crops: (K, 64, 64, 3) float32 crops of the left head, in [-1, 1].
        right_crops: Same for the right head. "Left" is the head whose center
            x is smaller in the window's central frame (ties: smaller y).
        head_map: (64, 64, 3) rendered position map, values in [0, 1].
        geometry: Relative placement tuple for the central frame.
        label: LABEL_LAEO, LABEL_NOT_LAEO, or None for unlabeled samples.
    """

    left_crops: np.ndarray
    right_crops: np.ndarray
    head_map: np.ndarray
    geometry: GeometryTuple
    label: int | None = None

    def __post_init__(self):
        for name in ("left_crops", "right_crops"):
            crops = getattr(self, name)
            if crops.ndim != 4 or crops.shape[1:] != (CROP_SIZE, CROP_SIZE, 3):
                raise ValueError(f"{name} must be (K, 64, 64, 3), got {crops.shape}")
        if self.left_crops.shape[0] != self.right_crops.shape[0]:
            raise ValueError("left and right crop sequences must have the same length")
        if self.head_map.shape != (CROP_SIZE, CROP_SIZE, 3):
            raise ValueError(f"head_map must be (64, 64, 3), got {self.head_map.shape}")
        if self.label not in (None, LABEL_LAEO, LABEL_NOT_LAEO):
            raise ValueError(f"label must be 0, 1 or None, got {self.label}")

    @property
    def num_frames(self) -> int:
        return self.left_crops.shape[0]


def crop_and_resize(frame: np.ndarray, box: BoundingBox, out_size: int = CROP_SIZE) -> np.ndarray:
    """Bilinearly resample the boxed region of `frame` to out_size x out_size.

    Regions of the box outside the frame are zero-padded. The box must
    intersect the frame at all, otherwise the track geometry is invalid.

    Args:
        frame: (H, W, C) or (H, W) array, any numeric dtype.
        box: Region to extract, float pixel coordinates.

    Returns:
        (out_size, out_size, C) float32 array in the input's value scale.
    """
    frame = np.asarray(frame)
    if frame.ndim == 2:
        frame = frame[:, :, None]
    h, w = frame.shape[:2]
    if box.x2 <= 0 or box.y2 <= 0 or box.x1 >= w or box.y1 >= h:
        raise ValueError(f"box {box} lies fully outside a {w}x{h} frame")

    # Output pixel centers mapped into source coordinates.
    xs = box.x1 + (np.arange(out_size, dtype=np.float64) + 0.5) * box.width / out_size - 0.5
    ys = box.y1 + (np.arange(out_size, dtype=np.float64) + 0.5) * box.height / out_size - 0.5

    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    wx = (xs - x0).astype(np.float32)
    wy = (ys - y0).astype(np.float32)

    img = frame.astype(np.float32)

    def gather(yi, xi):
        valid = ((yi >= 0) & (yi < h))[:, None] & ((xi >= 0) & (xi < w))[None, :]
        vals = img[np.clip(yi, 0, h - 1)[:, None], np.clip(xi, 0, w - 1)[None, :]]
        return vals * valid[:, :, None]

    top = gather(y0, x0) * (1 - wx)[None, :, None] + gather(y0, x0 + 1) * wx[None, :, None]
    bot = gather(y0 + 1, x0) * (1 - wx)[None, :, None] + gather(y0 + 1, x0 + 1) * wx[None, :, None]
    return top * (1 - wy)[:, None, None] + bot * wy[:, None, None]


def normalize_crop(crop: np.ndarray) -> np.ndarray:
    """Map pixel values [0, 255] to [-1, 1] float32 (zero-centered conv input)."""
    return (np.asarray(crop, dtype=np.float32) / 127.5) - 1.0
