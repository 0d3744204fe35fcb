"""Build labeled pair samples from single pose-labeled head images.

A still head is replicated into a fake crop sequence (middle replicas kept
pristine, the rest mildly perturbed), two heads are placed in a synthetic
frame, and the pair is labeled positive when their yaw angles point at each
other from their placement. Negatives come from mirroring one head,
same-direction pairs, or swapping the placement so the gaze rays diverge.

Heads can be real crops (see load_labeled_heads for the annotation schema)
or procedurally rendered, which keeps the test corpus self-contained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .core import (
    CROP_SIZE,
    LABEL_LAEO,
    LABEL_NOT_LAEO,
    BoundingBox,
    PoseAngles,
    TrackPairSample,
    crop_and_resize,
    normalize_crop,
)
from .headmap import HeadMapSpec, geometry_tuple, render_head_map

NEGATIVE_MODES = ("mirror_one", "same_direction", "inconsistent_geometry")

# Minimum |yaw| (normalized units) for a head to count as looking sideways,
# and the pitch agreement required for a plausible mutual gaze.
YAW_MARGIN = 0.1
PITCH_TOLERANCE = 0.25

_SEED_SPAN = 2**32


class IncompatiblePoseError(ValueError):
    """The given heads/placement cannot form the requested pair; resample."""


@dataclass(frozen=True)
class LabeledHeadImage:
    """A head crop with known orientation.

    Attributes:
        image: (H, W, 3) uint8 RGB crop, any size (resampled to 64 later).
        pose: Head orientation; positive yaw points the face toward image +x.
        source_id: Provenance tag (file name, renderer seed, ...).
    """

    image: np.ndarray
    pose: PoseAngles
    source_id: str = ""


@dataclass(frozen=True)
class AugmentationSpec:
    """Magnitudes of the per-replica perturbations.

    max_zoom is a multiplicative bound: scale is drawn from
    [2 - max_zoom, max_zoom]. mirror enables whole-sample mirroring as a
    train-time augmentation (replication never mirrors, that would flip the
    yaw mid-sequence).
    """

    max_shift: float = 4.0
    max_zoom: float = 1.05
    max_brightness_delta: float = 0.10
    mirror: bool = True

    def __post_init__(self):
        if self.max_shift < 0 or self.max_brightness_delta < 0:
            raise ValueError("perturbation magnitudes must be nonnegative")
        if self.max_zoom < 1.0:
            raise ValueError("max_zoom is multiplicative and must be >= 1")


def _to_crop(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.shape[:2] == (CROP_SIZE, CROP_SIZE):
        return image.astype(np.uint8)
    h, w = image.shape[:2]
    resized = crop_and_resize(image, BoundingBox(0, 0, w, h))
    return np.clip(np.rint(resized), 0, 255).astype(np.uint8)


def _perturb(crop: np.ndarray, aug: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    dx = rng.uniform(-aug.max_shift, aug.max_shift)
    dy = rng.uniform(-aug.max_shift, aug.max_shift)
    zoom = rng.uniform(2.0 - aug.max_zoom, aug.max_zoom)
    gain = 1.0 + rng.uniform(-aug.max_brightness_delta, aug.max_brightness_delta)
    half = 0.5 * CROP_SIZE / zoom
    cx, cy = 0.5 * CROP_SIZE + dx, 0.5 * CROP_SIZE + dy
    window = BoundingBox(cx - half, cy - half, cx + half, cy + half)
    out = crop_and_resize(crop, window) * gain
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def replicate_to_sequence(
    head: LabeledHeadImage,
    num_frames: int,
    aug: AugmentationSpec = AugmentationSpec(),
    rng_seed: int = 0,
) -> np.ndarray:
    """Fake a crop sequence from one still: (num_frames, 64, 64, 3) uint8.

    The two middle replicas stay bit-identical to the source; every other
    replica gets an independent small shift/zoom/brightness change.
    """
    if num_frames < 2:
        raise ValueError("need at least two replicas to keep the middle pair pristine")
    rng = np.random.default_rng(rng_seed)
    base = _to_crop(head.image)
    pristine = {(num_frames - 1) // 2, num_frames // 2}
    frames = [
        base.copy() if i in pristine else _perturb(base, aug, rng) for i in range(num_frames)
    ]
    return np.stack(frames)


def laeo_compatible(left_pose: PoseAngles, right_pose: PoseAngles, yaw_margin: float = YAW_MARGIN) -> bool:
    """With the heads already ordered left/right in the frame: the left one
    must look right, the right one left, with roughly agreeing pitch."""
    left = left_pose.normalized()
    right = right_pose.normalized()
    return bool(
        left[0] > yaw_margin
        and right[0] < -yaw_margin
        and abs(left[1] - right[1]) < PITCH_TOLERANCE
    )


# ---------------------------------------------------------------------------
# Procedural heads: shaded ellipsoid + nose marker + hair cap. Enough signal
# to regress all three angles, no external data needed.
# ---------------------------------------------------------------------------


def render_head(pose: PoseAngles, size: int = CROP_SIZE, style_seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(style_seed)
    skin = np.array([205, 172, 148], dtype=np.float64) + rng.uniform(-18, 18, 3)
    hair = np.array([62, 44, 32], dtype=np.float64) + rng.uniform(-12, 12, 3)
    background = np.array([46, 49, 57], dtype=np.float64) + rng.uniform(-10, 10, 3)

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = cy = (size - 1) / 2.0
    rx, ry = 0.36 * size, 0.46 * size
    u = (xs - cx) / rx
    v = (ys - cy) / ry
    head_mask = (u * u + v * v) <= 1.0

    yaw, pitch, roll = pose.yaw, pose.pitch, pose.roll
    cos_r, sin_r = math.cos(roll), math.sin(roll)
    ur = cos_r * u + sin_r * v
    vr = -sin_r * u + cos_r * v

    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = background

    # Frontal views are brighter; the lit side follows the yaw/pitch sign.
    base_gain = 0.55 + 0.45 * math.cos(yaw) * math.cos(pitch)
    gradient = 1.0 + 0.5 * math.sin(yaw) * ur - 0.3 * math.sin(pitch) * vr
    shading = np.clip(base_gain * gradient, 0.15, 1.6)
    img[head_mask] = skin[None, :] * shading[head_mask][:, None]

    hair_line = -(0.35 - 0.3 * math.sin(pitch))
    hair_mask = head_mask & (vr < hair_line)
    img[hair_mask] = hair

    nose_u = 0.55 * math.sin(yaw)
    nose_v = -0.55 * math.sin(pitch)
    nx = cx + (cos_r * nose_u - sin_r * nose_v) * rx
    ny = cy + (sin_r * nose_u + cos_r * nose_v) * ry
    nose_mask = ((xs - nx) ** 2 + (ys - ny) ** 2) <= (0.085 * size) ** 2
    img[nose_mask & head_mask] = np.array([152, 62, 50], dtype=np.float64)

    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def random_labeled_head(
    rng: np.random.Generator,
    yaw_sign: int | None = None,
    pitch_norm: float | None = None,
    source_id: str | None = None,
) -> LabeledHeadImage:
    """Draw a pose in comfortable ranges and render it. yaw_sign forces the
    gaze side (+1 looks right, -1 looks left); pitch_norm pins the pitch,
    which pair builders use to keep partners within the pitch tolerance."""
    magnitude = rng.uniform(0.15, 0.7)
    sign = yaw_sign if yaw_sign is not None else (1 if rng.uniform() < 0.5 else -1)
    pitch = rng.uniform(-0.2, 0.2) if pitch_norm is None else pitch_norm
    pose = PoseAngles.from_normalized((sign * magnitude, pitch, rng.uniform(-0.2, 0.2)))
    style = int(rng.integers(_SEED_SPAN))
    return LabeledHeadImage(
        image=render_head(pose, style_seed=style),
        pose=pose,
        source_id=source_id or f"proc-{style:08x}",
    )


# ---------------------------------------------------------------------------
# Pair assembly
# ---------------------------------------------------------------------------

DEFAULT_FRAME_SIZE = (640.0, 360.0)

# geometry sampler: (rng, head_a, head_b) -> (box_a, box_b, frame_size)
GeometrySampler = Callable[..., tuple[BoundingBox, BoundingBox, tuple[float, float]]]


def default_geometry_sampler(
    rng: np.random.Generator, a: LabeledHeadImage, b: LabeledHeadImage
) -> tuple[BoundingBox, BoundingBox, tuple[float, float]]:
    """Place the right-looking head on the left side of the frame and the
    other on the right, at plausible scales and near-level heights."""
    w, h = DEFAULT_FRAME_SIZE
    side_left = rng.uniform(0.12, 0.25) * h
    side_right = side_left * rng.uniform(0.75, 1.33)
    lx = rng.uniform(0.15, 0.38) * w
    rx = rng.uniform(0.62, 0.85) * w
    ly = rng.uniform(0.30, 0.70) * h
    ry = float(np.clip(ly + rng.uniform(-0.15, 0.15) * h, 0.25 * h, 0.75 * h))

    def box(cx: float, cy: float, side: float) -> BoundingBox:
        return BoundingBox(cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2)

    left_box, right_box = box(lx, ly, side_left), box(rx, ry, side_right)
    if a.pose.yaw > 0 and b.pose.yaw <= 0:
        return left_box, right_box, DEFAULT_FRAME_SIZE
    if b.pose.yaw > 0 and a.pose.yaw <= 0:
        return right_box, left_box, DEFAULT_FRAME_SIZE
    # Same-sign pair: order is arbitrary, the compatibility check decides.
    return left_box, right_box, DEFAULT_FRAME_SIZE


def _assemble(
    left_crops: np.ndarray,
    right_crops: np.ndarray,
    left_box: BoundingBox,
    right_box: BoundingBox,
    frame_size: tuple[float, float],
    label: int,
    map_spec: HeadMapSpec,
) -> TrackPairSample:
    head_map = render_head_map([left_box, right_box], 0, 1, frame_size, map_spec)
    return TrackPairSample(
        left_crops=normalize_crop(left_crops),
        right_crops=normalize_crop(right_crops),
        head_map=head_map.astype(np.float32),
        geometry=geometry_tuple(left_box, right_box, frame_size),
        label=label,
    )


def _replicate_pair(
    rng: np.random.Generator,
    a: LabeledHeadImage,
    b: LabeledHeadImage,
    num_frames: int,
    aug: AugmentationSpec,
) -> tuple[np.ndarray, np.ndarray]:
    # Seeds are tied to the heads in argument order, not to the left/right
    # slots, so re-placing the same heads reuses the same crop sequences.
    seed_a = int(rng.integers(_SEED_SPAN))
    seed_b = int(rng.integers(_SEED_SPAN))
    return (
        replicate_to_sequence(a, num_frames, aug, seed_a),
        replicate_to_sequence(b, num_frames, aug, seed_b),
    )


def make_positive_pair(
    a: LabeledHeadImage,
    b: LabeledHeadImage,
    rng_seed: int,
    num_frames: int = 10,
    aug: AugmentationSpec = AugmentationSpec(),
    map_spec: HeadMapSpec = HeadMapSpec(),
    geometry_sampler: GeometrySampler = default_geometry_sampler,
) -> TrackPairSample:
    """Place the two heads so they look at each other; label 1.

    Raises IncompatiblePoseError when the poses cannot support mutual gaze
    (same yaw sign, too frontal, disagreeing pitch) or the sampler put the
    right-looking head on the wrong side. Callers resample with other heads.
    """
    rng = np.random.default_rng(rng_seed)
    box_a, box_b, frame_size = geometry_sampler(rng, a, b)
    crops_a, crops_b = _replicate_pair(rng, a, b, num_frames, aug)
    if box_a.center[0] <= box_b.center[0]:
        left, left_crops, left_box = a, crops_a, box_a
        right, right_crops, right_box = b, crops_b, box_b
    else:
        left, left_crops, left_box = b, crops_b, box_b
        right, right_crops, right_box = a, crops_a, box_a
    if not laeo_compatible(left.pose, right.pose):
        raise IncompatiblePoseError(
            f"poses (yaw {left.pose.yaw:+.2f} left, {right.pose.yaw:+.2f} right rad) "
            "are not mutual-gaze compatible at this placement"
        )
    return _assemble(
        left_crops, right_crops, left_box, right_box, frame_size, LABEL_LAEO, map_spec
    )


def make_negative_pair(
    a: LabeledHeadImage,
    b: LabeledHeadImage,
    mode: str,
    rng_seed: int,
    num_frames: int = 10,
    aug: AugmentationSpec = AugmentationSpec(),
    map_spec: HeadMapSpec = HeadMapSpec(),
    geometry_sampler: GeometrySampler = default_geometry_sampler,
) -> TrackPairSample:
    """Build a not-looking-at-each-other pair; label 0.

    Modes:
        mirror_one: build the positive pair, then horizontally flip one
            side's crops (its yaw sign flips, breaking the mutual gaze).
        same_direction: both heads share a yaw sign; any placement fails the
            compatibility predicate.
        inconsistent_geometry: keep the poses but swap which head occupies
            each placement, so both look away from the pair. With the same
            seed the boxes (hence map and geometry) match the positive
            sample's and the crop sequences trade sides.
    """
    if mode not in NEGATIVE_MODES:
        raise ValueError(f"unknown negative mode {mode!r}")

    if mode == "mirror_one":
        sample = make_positive_pair(a, b, rng_seed, num_frames, aug, map_spec, geometry_sampler)
        side_rng = np.random.default_rng((rng_seed, 1))
        flip_left = bool(side_rng.integers(2))
        flipped = np.ascontiguousarray(
            np.flip(sample.left_crops if flip_left else sample.right_crops, axis=2)
        )
        return replace(
            sample,
            left_crops=flipped if flip_left else sample.left_crops,
            right_crops=sample.right_crops if flip_left else flipped,
            label=LABEL_NOT_LAEO,
        )

    rng = np.random.default_rng(rng_seed)
    box_a, box_b, frame_size = geometry_sampler(rng, a, b)
    crops_a, crops_b = _replicate_pair(rng, a, b, num_frames, aug)

    if mode == "same_direction":
        sa, sb = np.sign(a.pose.yaw), np.sign(b.pose.yaw)
        if sa == 0 or sa != sb:
            raise IncompatiblePoseError("same_direction mode needs two heads with one yaw sign")
        if box_a.center[0] <= box_b.center[0]:
            left, left_crops, left_box = a, crops_a, box_a
            right, right_crops, right_box = b, crops_b, box_b
        else:
            left, left_crops, left_box = b, crops_b, box_b
            right, right_crops, right_box = a, crops_a, box_a
    else:  # inconsistent_geometry
        if np.sign(a.pose.yaw) * np.sign(b.pose.yaw) >= 0:
            raise IncompatiblePoseError(
                "inconsistent_geometry mode needs one right-looking and one left-looking head"
            )
        lo_box, hi_box = (box_a, box_b) if box_a.center[0] <= box_b.center[0] else (box_b, box_a)
        # The left-looking head takes the left slot: both gaze rays diverge.
        if a.pose.yaw < 0:
            left, left_crops, right, right_crops = a, crops_a, b, crops_b
        else:
            left, left_crops, right, right_crops = b, crops_b, a, crops_a
        left_box, right_box = lo_box, hi_box

    if laeo_compatible(left.pose, right.pose):
        raise IncompatiblePoseError(f"{mode} construction unexpectedly produced a compatible pair")
    return _assemble(
        left_crops, right_crops, left_box, right_box, frame_size, LABEL_NOT_LAEO, map_spec
    )


def mirror_sample(sample: TrackPairSample) -> TrackPairSample:
    """Whole-sample horizontal mirror (label-preserving augmentation): crops
    swap sides and flip, the map flips with its target channels swapped, and
    the geometry reflects accordingly."""
    new_left = np.ascontiguousarray(np.flip(sample.right_crops, axis=2))
    new_right = np.ascontiguousarray(np.flip(sample.left_crops, axis=2))
    flipped_map = np.flip(sample.head_map, axis=1)
    new_map = np.ascontiguousarray(flipped_map[:, :, (1, 0, 2)])
    g = sample.geometry
    new_geometry = replace(g, dy=-g.dy, scale_ratio=1.0 / g.scale_ratio)
    return TrackPairSample(new_left, new_right, new_map, new_geometry, sample.label)


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------


def make_corpus(
    num_positive: int,
    num_negative: int,
    seed: int = 0,
    num_frames: int = 10,
    aug: AugmentationSpec = AugmentationSpec(),
    map_spec: HeadMapSpec = HeadMapSpec(),
) -> list[TrackPairSample]:
    """Procedural balanced corpus; negatives cycle through the three modes."""
    rng = np.random.default_rng(seed)

    def facing_pair():
        a = random_labeled_head(rng, yaw_sign=1)
        partner_pitch = float(
            np.clip(a.pose.normalized()[1] + rng.uniform(-0.18, 0.18), -0.2, 0.2)
        )
        b = random_labeled_head(rng, yaw_sign=-1, pitch_norm=partner_pitch)
        return a, b

    samples = []
    for _ in range(num_positive):
        a, b = facing_pair()
        samples.append(
            make_positive_pair(a, b, int(rng.integers(_SEED_SPAN)), num_frames, aug, map_spec)
        )
    for i in range(num_negative):
        mode = NEGATIVE_MODES[i % len(NEGATIVE_MODES)]
        if mode == "same_direction":
            sign = 1 if rng.uniform() < 0.5 else -1
            a = random_labeled_head(rng, yaw_sign=sign)
            b = random_labeled_head(rng, yaw_sign=sign)
        else:
            a, b = facing_pair()
        samples.append(
            make_negative_pair(a, b, mode, int(rng.integers(_SEED_SPAN)), num_frames, aug, map_spec)
        )
    return samples


def generate_pose_dataset(
    num_samples: int,
    num_frames: int = 10,
    seed: int = 0,
    aug: AugmentationSpec = AugmentationSpec(),
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Procedural pose-regression set: (crops uint8 (K, 64, 64, 3), target
    (3,) normalized angles) pairs."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(num_samples):
        head = random_labeled_head(rng)
        crops = replicate_to_sequence(head, num_frames, aug, int(rng.integers(_SEED_SPAN)))
        out.append((crops, head.pose.normalized()))
    return out


def load_labeled_heads(annotation_path, images_root=None) -> list[LabeledHeadImage]:
    """Read pose-labeled head crops from a plain-text annotation file.

    Schema (one head per line, comma-separated):
        relative/path/to/crop.jpg,yaw,pitch,roll
    with angles in radians. Blank lines and lines starting with '#' are
    skipped. Images are loaded relative to images_root (default: the
    annotation file's directory).
    """
    from pathlib import Path

    from PIL import Image

    annotation_path = Path(annotation_path)
    root = Path(images_root) if images_root is not None else annotation_path.parent
    heads = []
    for raw in annotation_path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        path_part, yaw, pitch, roll = (tok.strip() for tok in line.split(","))
        with Image.open(root / path_part) as im:
            image = np.asarray(im.convert("RGB"))
        pose = PoseAngles(float(yaw), float(pitch), float(roll))
        heads.append(LabeledHeadImage(image=image, pose=pose, source_id=path_part))
    return heads
