"""File formats: JSON-lines annotations, the run config, deterministic
array archives, and the frame provider used instead of a video decoder.

All annotation-ish data (detections, boxes, pair labels, poses, shot
boundaries, tracks, window scores) shares one JSON-lines container: one
object per line with video_id, frame, kind, and a per-kind payload. The
format is streamable, diff-able, and merges across videos by concatenation.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .core import (
    LABEL_LAEO,
    LABEL_NOT_LAEO,
    BoundingBox,
    HeadDetection,
    HeadTrack,
    PoseAngles,
    TrackPairSample,
    normalize_crop,
)
from .headmap import HeadMapSpec
from .model import LaeoNetConfig, config_from_dict
from .pipeline import TrainConfig
from .synthgen import AugmentationSpec
from .tracker import LinkerConfig

RECORD_KINDS = (
    "head_box",
    "body_box",
    "pair_label",
    "pose",
    "shot_boundary",
    "detection",
    "track",
    "window_score",
)

PAIR_LABELS = ("laeo", "not_laeo", "ambiguous")


class AnnotationFormatError(ValueError):
    """Malformed annotation line; the message cites the 1-based line number."""


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    frame: int
    kind: str
    payload: dict

    def __post_init__(self):
        if self.kind not in RECORD_KINDS:
            raise ValueError(f"unknown record kind {self.kind!r}")
        if self.frame < 0:
            raise ValueError("frame must be nonnegative")


def _box_from_list(values: Sequence[float]) -> BoundingBox:
    if len(values) != 4:
        raise ValueError(f"box needs 4 coordinates, got {len(values)}")
    return BoundingBox(*(float(v) for v in values))


def read_records(path) -> Iterator[AnnotationRecord]:
    """Parse a JSON-lines annotation file, citing the offending line on error."""
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                record = AnnotationRecord(
                    video_id=str(obj["video_id"]),
                    frame=int(obj["frame"]),
                    kind=obj["kind"],
                    payload=dict(obj.get("payload", {})),
                )
                _validate_payload(record)
            except AnnotationFormatError:
                raise
            except Exception as exc:
                raise AnnotationFormatError(f"line {line_no}: {exc}") from exc
            yield record


def _validate_payload(record: AnnotationRecord) -> None:
    payload = record.payload
    if record.kind in ("head_box", "body_box"):
        _box_from_list(payload["box"])
        payload["id"]
    elif record.kind == "detection":
        _box_from_list(payload["box"])
        score = float(payload["score"])
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"detection score {score} outside [0, 1]")
    elif record.kind == "pair_label":
        payload["a"], payload["b"]
        if payload["label"] not in PAIR_LABELS:
            raise ValueError(f"unknown pair label {payload['label']!r}")
    elif record.kind == "pose":
        angles = payload["angles"]
        if len(angles) != 3:
            raise ValueError("pose needs [yaw, pitch, roll]")
        PoseAngles(*(float(a) for a in angles))
    elif record.kind == "track":
        HeadTrack(
            track_id=int(payload["track_id"]),
            start_frame=int(payload["start_frame"]),
            boxes=tuple(_box_from_list(b) for b in payload["boxes"]),
            per_frame_scores=tuple(float(s) for s in payload["scores"]),
            interpolated_mask=tuple(bool(m) for m in payload["interpolated"]),
        )
    elif record.kind == "window_score":
        _box_from_list(payload["left_box"])
        _box_from_list(payload["right_box"])
        float(payload["score"])


def write_records(path, records: Iterable[AnnotationRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "video_id": record.video_id,
                        "frame": record.frame,
                        "kind": record.kind,
                        "payload": record.payload,
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")


@dataclass
class AnnotationSet:
    """Validated, indexed view of one annotation file."""

    boxes: dict = field(default_factory=dict)  # (video, frame) -> {id: (kind, box)}
    pairs: list = field(default_factory=list)  # (video, frame, id_a, id_b, label)
    poses: list = field(default_factory=list)  # (video, frame, id|None, PoseAngles)
    shot_boundaries: dict = field(default_factory=dict)  # video -> sorted [frames]
    detections: dict = field(default_factory=dict)  # video -> {frame: [HeadDetection]}
    tracks: dict = field(default_factory=dict)  # video -> [HeadTrack]
    window_scores: dict = field(default_factory=dict)  # video -> [payload dicts]

    @property
    def video_ids(self) -> set[str]:
        ids = set(self.shot_boundaries) | set(self.detections) | set(self.tracks)
        ids.update(v for v, _ in self.boxes)
        ids.update(v for v, *_ in self.pairs)
        return ids


def load_annotations(path) -> AnnotationSet:
    """Read and cross-validate a JSON-lines file: box ids must be unique per
    (video, frame) and pair labels must reference existing boxes."""
    result = AnnotationSet()
    pending_pairs = []
    for record in read_records(path):
        key = (record.video_id, record.frame)
        payload = record.payload
        if record.kind in ("head_box", "body_box"):
            frame_boxes = result.boxes.setdefault(key, {})
            box_id = str(payload["id"])
            if box_id in frame_boxes:
                raise AnnotationFormatError(
                    f"duplicate box id {box_id!r} in video {record.video_id!r} frame {record.frame}"
                )
            frame_boxes[box_id] = (record.kind, _box_from_list(payload["box"]))
        elif record.kind == "pair_label":
            pending_pairs.append(
                (record.video_id, record.frame, str(payload["a"]), str(payload["b"]), payload["label"])
            )
        elif record.kind == "pose":
            result.poses.append(
                (
                    record.video_id,
                    record.frame,
                    str(payload["id"]) if "id" in payload else None,
                    PoseAngles(*(float(a) for a in payload["angles"])),
                )
            )
        elif record.kind == "shot_boundary":
            result.shot_boundaries.setdefault(record.video_id, []).append(record.frame)
        elif record.kind == "detection":
            per_video = result.detections.setdefault(record.video_id, {})
            per_video.setdefault(record.frame, []).append(
                HeadDetection(record.frame, _box_from_list(payload["box"]), float(payload["score"]))
            )
        elif record.kind == "track":
            result.tracks.setdefault(record.video_id, []).append(
                HeadTrack(
                    track_id=int(payload["track_id"]),
                    start_frame=int(payload["start_frame"]),
                    boxes=tuple(_box_from_list(b) for b in payload["boxes"]),
                    per_frame_scores=tuple(float(s) for s in payload["scores"]),
                    interpolated_mask=tuple(bool(m) for m in payload["interpolated"]),
                )
            )
        elif record.kind == "window_score":
            result.window_scores.setdefault(record.video_id, []).append(payload)

    for video, frame, id_a, id_b, label in pending_pairs:
        frame_boxes = result.boxes.get((video, frame), {})
        for box_id in (id_a, id_b):
            if box_id not in frame_boxes:
                raise AnnotationFormatError(
                    f"pair label in video {video!r} frame {frame} references missing box {box_id!r}"
                )
        result.pairs.append((video, frame, id_a, id_b, label))
    for frames in result.shot_boundaries.values():
        frames.sort()
    return result


def detections_by_frame(
    annotations: AnnotationSet, video_id: str
) -> tuple[int, list[list[HeadDetection]]]:
    """Dense per-frame detection lists for one video, plus the first frame
    index (frames before it are empty anyway)."""
    per_video = annotations.detections.get(video_id, {})
    if not per_video:
        return 0, []
    first = min(per_video)
    last = max(per_video)
    return first, [per_video.get(f, []) for f in range(first, last + 1)]


def track_record(video_id: str, track: HeadTrack) -> AnnotationRecord:
    return AnnotationRecord(
        video_id=video_id,
        frame=track.start_frame,
        kind="track",
        payload={
            "track_id": track.track_id,
            "start_frame": track.start_frame,
            "boxes": [b.as_list() for b in track.boxes],
            "scores": list(track.per_frame_scores),
            "interpolated": list(track.interpolated_mask),
        },
    )


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """One declarative file driving every command; all defaults materialize
    on load and unknown keys are rejected.

    crop_expansion scales head boxes about their center before cropping
    (1.0 = tight box)."""

    seed: int = 0
    crop_expansion: float = 1.0
    model: LaeoNetConfig = LaeoNetConfig()
    train: TrainConfig = TrainConfig()
    linker: LinkerConfig = LinkerConfig()
    headmap: HeadMapSpec = HeadMapSpec()
    augment: AugmentationSpec = AugmentationSpec()

    def __post_init__(self):
        if self.crop_expansion <= 0:
            raise ValueError("crop_expansion must be positive")


_SECTION_TYPES = {
    "model": LaeoNetConfig,
    "train": TrainConfig,
    "linker": LinkerConfig,
    "headmap": HeadMapSpec,
    "augment": AugmentationSpec,
}


def _build_section(cls, data: Mapping, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown keys {sorted(unknown)} in config section {section!r}")
    if cls is LaeoNetConfig:
        return config_from_dict(data)
    return cls(**data)


def run_config_from_dict(data: Mapping) -> RunConfig:
    data = dict(data)
    unknown = set(data) - ({"seed", "crop_expansion"} | set(_SECTION_TYPES))
    if unknown:
        raise ValueError(f"unknown top-level config keys {sorted(unknown)}")
    kwargs = {
        "seed": int(data.get("seed", 0)),
        "crop_expansion": float(data.get("crop_expansion", 1.0)),
    }
    for section, cls in _SECTION_TYPES.items():
        if section in data:
            kwargs[section] = _build_section(cls, data[section], section)
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return run_config_from_dict(json.load(fh))


def save_run_config(path, config: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Deterministic array archives (.npz with pinned zip timestamps)
# ---------------------------------------------------------------------------


def save_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    """Write an .npz readable by numpy.load, but byte-identical across runs:
    entries are stored uncompressed with a fixed timestamp, sorted by name."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_arrays(path) -> dict[str, np.ndarray]:
    with np.load(path) as data:
        return {name: data[name] for name in data.files}


def _crops_to_uint8(crops: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(crops) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def save_sample_archive(path, samples: Sequence[TrackPairSample]) -> None:
    """Pack pair samples into one archive; crops are stored as uint8."""
    labels = np.array(
        [-1 if s.label is None else int(s.label) for s in samples], dtype=np.int64
    )
    save_arrays(
        path,
        {
            "left_crops": np.stack([_crops_to_uint8(s.left_crops) for s in samples]),
            "right_crops": np.stack([_crops_to_uint8(s.right_crops) for s in samples]),
            "head_maps": np.stack([s.head_map for s in samples]).astype(np.float32),
            "geometry": np.stack([s.geometry.as_array() for s in samples]),
            "labels": labels,
        },
    )


def load_sample_archive(path) -> list[TrackPairSample]:
    from .core import GeometryTuple

    data = load_arrays(path)
    samples = []
    for i in range(len(data["labels"])):
        label = int(data["labels"][i])
        samples.append(
            TrackPairSample(
                left_crops=normalize_crop(data["left_crops"][i]),
                right_crops=normalize_crop(data["right_crops"][i]),
                head_map=data["head_maps"][i],
                geometry=GeometryTuple(*data["geometry"][i]),
                label={1: LABEL_LAEO, 0: LABEL_NOT_LAEO}.get(label, None),
            )
        )
    return samples


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class ImageDirFrameProvider:
    """Serves video frames from a directory of numbered image files; frame
    index i is the i-th file in sorted name order."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.paths = sorted(
            p for p in self.directory.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
        )
        if not self.paths:
            raise FileNotFoundError(f"no image files in {self.directory}")

    def __len__(self) -> int:
        return len(self.paths)

    def frame(self, index: int) -> np.ndarray:
        from PIL import Image

        if not 0 <= index < len(self.paths):
            raise IndexError(f"frame {index} outside [0, {len(self.paths)})")
        with Image.open(self.paths[index]) as im:
            return np.asarray(im.convert("RGB"))

    @property
    def frame_size(self) -> tuple[int, int]:
        """(width, height) of the first frame."""
        first = self.frame(0)
        return first.shape[1], first.shape[0]


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, inputs: Mapping[str, str], outputs: Sequence[str],
                   config_digest: str, seed: int, extra: Mapping | None = None) -> None:
    """Reproducibility sidecar written by every command. The created_at
    field is the only part that varies between identical runs."""
    import datetime

    manifest = {
        "command": command,
        "inputs": {
            name: {"path": str(p), "sha256": file_digest(p) if Path(p).is_file() else None}
            for name, p in inputs.items()
        },
        "outputs": [str(p) for p in outputs],
        "config_digest": config_digest,
        "seed": seed,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
