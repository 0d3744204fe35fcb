"""Group per-frame head detections into tracks by greedy overlap linking.

Per frame, existing tracks (strongest first) each claim the unclaimed
detection that overlaps their last matched box enough; leftovers seed new
tracks. A track that misses its configured number of consecutive frames
stops at its last match, and shorter gaps are filled by linear
interpolation. All ties are broken by fixed rules so a given input always
produces the same tracks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BoundingBox, HeadDetection, HeadTrack, iou


@dataclass(frozen=True)
class LinkerConfig:
    """Linking parameters.

    Attributes:
        top_n: Detections kept per frame (highest scored).
        overlap_threshold: Minimum IoU to extend a track to a detection;
            also the mean-IoU threshold for merging forward/backward tracks.
        max_gap: Consecutive unmatched frames before a track stops.
        direction: "forward", "backward" or "bidirectional".
    """

    top_n: int = 10
    overlap_threshold: float = 0.3
    max_gap: int = 5
    direction: str = "bidirectional"

    def __post_init__(self):
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if not 0.0 < self.overlap_threshold < 1.0:
            raise ValueError("overlap_threshold must be in (0, 1)")
        if self.max_gap < 1:
            raise ValueError("max_gap must be >= 1")
        if self.direction not in ("forward", "backward", "bidirectional"):
            raise ValueError(f"unknown direction {self.direction!r}")


def filter_top_n(
    detections_by_frame: Sequence[Sequence[HeadDetection]], top_n: int
) -> list[list[HeadDetection]]:
    """Keep at most top_n detections per frame, sorted by descending score,
    score ties by smaller box x1 (then y1, for full determinism)."""
    out = []
    for dets in detections_by_frame:
        ranked = sorted(dets, key=lambda d: (-d.score, d.box.x1, d.box.y1))
        out.append(ranked[:top_n])
    return out


class _ActiveTrack:
    __slots__ = ("track_id", "entries", "gap")

    def __init__(self, track_id: int, frame: int, det: HeadDetection):
        self.track_id = track_id
        self.entries: list[tuple[int, BoundingBox, float]] = [(frame, det.box, det.score)]
        self.gap = 0

    @property
    def last_box(self) -> BoundingBox:
        return self.entries[-1][1]

    @property
    def mean_score(self) -> float:
        return sum(e[2] for e in self.entries) / len(self.entries)


def _interp_box(a: BoundingBox, b: BoundingBox, t: float) -> BoundingBox:
    return BoundingBox(
        a.x1 + (b.x1 - a.x1) * t,
        a.y1 + (b.y1 - a.y1) * t,
        a.x2 + (b.x2 - a.x2) * t,
        a.y2 + (b.y2 - a.y2) * t,
    )


def _finalize(track: _ActiveTrack, start_offset: int) -> HeadTrack:
    boxes: list[BoundingBox] = []
    scores: list[float] = []
    interp: list[bool] = []
    for i, (frame, box, score) in enumerate(track.entries):
        if i > 0:
            prev_frame, prev_box, prev_score = track.entries[i - 1]
            for g in range(prev_frame + 1, frame):
                t = (g - prev_frame) / (frame - prev_frame)
                boxes.append(_interp_box(prev_box, box, t))
                scores.append(prev_score + (score - prev_score) * t)
                interp.append(True)
        boxes.append(box)
        scores.append(score)
        interp.append(False)
    return HeadTrack(
        track_id=track.track_id,
        start_frame=track.entries[0][0] + start_offset,
        boxes=tuple(boxes),
        per_frame_scores=tuple(scores),
        interpolated_mask=tuple(interp),
    )


def link_tracks(
    detections_by_frame: Sequence[Sequence[HeadDetection]],
    config: LinkerConfig = LinkerConfig(),
    start_frame: int = 0,
) -> list[HeadTrack]:
    """Run the greedy linker forward over consecutive frames.

    detections_by_frame[i] holds the detections of frame start_frame + i.
    Tracks are extended strongest-track-first; each claims the unclaimed
    detection with the highest score among those whose IoU with the track's
    last matched box reaches the threshold. A track stops once it misses
    max_gap consecutive frames, ending at its last match; interior gaps are
    linearly interpolated and flagged.
    """
    filtered = filter_top_n(detections_by_frame, config.top_n)
    active: list[_ActiveTrack] = []
    done: list[HeadTrack] = []
    next_id = 0

    for frame, dets in enumerate(filtered):
        claimed = [False] * len(dets)
        # Strongest current track extends first; ties by creation order.
        for track in sorted(active, key=lambda t: (-t.mean_score, t.track_id)):
            best = None
            for i, det in enumerate(dets):
                if claimed[i]:
                    continue
                if iou(track.last_box, det.box) < config.overlap_threshold:
                    continue
                key = (-det.score, det.box.x1, det.box.y1, i)
                if best is None or key < best[0]:
                    best = (key, i)
            if best is None:
                track.gap += 1
            else:
                i = best[1]
                claimed[i] = True
                track.entries.append((frame, dets[i].box, dets[i].score))
                track.gap = 0

        still_active = []
        for track in active:
            if track.gap >= config.max_gap:
                done.append(_finalize(track, start_frame))
            else:
                still_active.append(track)
        active = still_active

        for i, det in enumerate(dets):
            if not claimed[i]:
                active.append(_ActiveTrack(next_id, frame, det))
                next_id += 1

    done.extend(_finalize(t, start_frame) for t in active)
    done.sort(key=lambda t: (t.start_frame, t.track_id))
    return _renumber(done)


def _renumber(tracks: list[HeadTrack]) -> list[HeadTrack]:
    return [
        HeadTrack(i, t.start_frame, t.boxes, t.per_frame_scores, t.interpolated_mask)
        for i, t in enumerate(tracks)
    ]


def _reverse_track(track: HeadTrack, num_frames: int) -> HeadTrack:
    start = num_frames - 1 - track.end_frame
    return HeadTrack(
        track_id=track.track_id,
        start_frame=start,
        boxes=tuple(reversed(track.boxes)),
        per_frame_scores=tuple(reversed(track.per_frame_scores)),
        interpolated_mask=tuple(reversed(track.interpolated_mask)),
    )


def _mean_overlap(a: HeadTrack, b: HeadTrack) -> float | None:
    lo = max(a.start_frame, b.start_frame)
    hi = min(a.end_frame, b.end_frame)
    if lo > hi:
        return None
    vals = [iou(a.box_at(f), b.box_at(f)) for f in range(lo, hi + 1)]
    return float(np.mean(vals))


def _merge_tracks(a: HeadTrack, b: HeadTrack, new_id: int) -> HeadTrack:
    lo = min(a.start_frame, b.start_frame)
    hi = max(a.end_frame, b.end_frame)
    boxes: list[BoundingBox] = []
    scores: list[float] = []
    interp: list[bool] = []
    for f in range(lo, hi + 1):
        in_a = a.covers(f)
        in_b = b.covers(f)
        if in_a and in_b:
            boxes.append(_interp_box(a.box_at(f), b.box_at(f), 0.5))
            ia = f - a.start_frame
            ib = f - b.start_frame
            scores.append(0.5 * (a.per_frame_scores[ia] + b.per_frame_scores[ib]))
            interp.append(a.interpolated_mask[ia] and b.interpolated_mask[ib])
        elif in_a:
            ia = f - a.start_frame
            boxes.append(a.box_at(f))
            scores.append(a.per_frame_scores[ia])
            interp.append(a.interpolated_mask[ia])
        else:
            ib = f - b.start_frame
            boxes.append(b.box_at(f))
            scores.append(b.per_frame_scores[ib])
            interp.append(b.interpolated_mask[ib])
    return HeadTrack(new_id, lo, tuple(boxes), tuple(scores), tuple(interp))


def link_bidirectional(
    detections_by_frame: Sequence[Sequence[HeadDetection]],
    config: LinkerConfig = LinkerConfig(),
    start_frame: int = 0,
) -> list[HeadTrack]:
    """Link forward and on the time-reversed sequence, then merge.

    A forward and a backward track merge when the mean IoU of their boxes
    over their common frames reaches the overlap threshold; merged boxes are
    the corner-wise average (which counters directional drift). Tracks with
    no partner pass through unchanged. Merging is one-to-one, highest mean
    IoU first.
    """
    num_frames = len(detections_by_frame)
    forward = link_tracks(detections_by_frame, config)
    backward_raw = link_tracks(list(reversed(detections_by_frame)), config)
    backward = [_reverse_track(t, num_frames) for t in backward_raw]

    candidates = []
    for ft in forward:
        for bt in backward:
            ov = _mean_overlap(ft, bt)
            if ov is not None and ov >= config.overlap_threshold:
                candidates.append((-ov, ft.track_id, bt.track_id))
    candidates.sort()

    used_f: set[int] = set()
    used_b: set[int] = set()
    merged: list[HeadTrack] = []
    f_by_id = {t.track_id: t for t in forward}
    b_by_id = {t.track_id: t for t in backward}
    for _, fid, bid in candidates:
        if fid in used_f or bid in used_b:
            continue
        used_f.add(fid)
        used_b.add(bid)
        merged.append(_merge_tracks(f_by_id[fid], b_by_id[bid], 0))

    merged.extend(t for t in forward if t.track_id not in used_f)
    merged.extend(t for t in backward if t.track_id not in used_b)
    merged.sort(key=lambda t: (t.start_frame, t.boxes[0].x1, t.boxes[0].y1, t.end_frame))
    out = _renumber(merged)
    if start_frame:
        out = [
            HeadTrack(t.track_id, t.start_frame + start_frame, t.boxes, t.per_frame_scores, t.interpolated_mask)
            for t in out
        ]
    return out


def link(
    detections_by_frame: Sequence[Sequence[HeadDetection]],
    config: LinkerConfig = LinkerConfig(),
    start_frame: int = 0,
) -> list[HeadTrack]:
    """Dispatch on config.direction."""
    if config.direction == "forward":
        return link_tracks(detections_by_frame, config, start_frame)
    if config.direction == "backward":
        num_frames = len(detections_by_frame)
        raw = link_tracks(list(reversed(detections_by_frame)), config)
        tracks = sorted(
            (_reverse_track(t, num_frames) for t in raw),
            key=lambda t: (t.start_frame, t.track_id),
        )
        tracks = _renumber(tracks)
        if start_frame:
            tracks = [
                HeadTrack(t.track_id, t.start_frame + start_frame, t.boxes, t.per_frame_scores, t.interpolated_mask)
                for t in tracks
            ]
        return tracks
    return link_bidirectional(detections_by_frame, config, start_frame)


@dataclass(frozen=True)
class PairWindow:
    """A fixed-length window where two tracks co-exist; the crop-free shell
    of a network sample.

    left/right is decided by head-center x in the central frame (ties by
    smaller y, then lower track id).
    """

    left_track_id: int
    right_track_id: int
    start_frame: int
    left_boxes: tuple[BoundingBox, ...]
    right_boxes: tuple[BoundingBox, ...]

    @property
    def num_frames(self) -> int:
        return len(self.left_boxes)

    @property
    def central_frame(self) -> int:
        return self.start_frame + self.num_frames // 2

    @property
    def frames(self) -> range:
        return range(self.start_frame, self.start_frame + self.num_frames)


def extract_pair_windows(
    tracks: Sequence[HeadTrack], num_frames: int = 10, stride: int = 1
) -> list[PairWindow]:
    """Emit one window per track pair per stride-spaced start frame where
    both tracks cover the whole window."""
    if num_frames < 1:
        raise ValueError("window length must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    windows = []
    ordered = sorted(tracks, key=lambda t: t.track_id)
    for ai in range(len(ordered)):
        for bi in range(ai + 1, len(ordered)):
            a, b = ordered[ai], ordered[bi]
            lo = max(a.start_frame, b.start_frame)
            hi = min(a.end_frame, b.end_frame)
            for start in range(lo, hi - num_frames + 2, stride):
                central = start + num_frames // 2
                ca, cb = a.box_at(central).center, b.box_at(central).center
                if (ca[0], ca[1], a.track_id) <= (cb[0], cb[1], b.track_id):
                    left, right = a, b
                else:
                    left, right = b, a
                windows.append(
                    PairWindow(
                        left_track_id=left.track_id,
                        right_track_id=right.track_id,
                        start_frame=start,
                        left_boxes=tuple(left.box_at(f) for f in range(start, start + num_frames)),
                        right_boxes=tuple(right.box_at(f) for f in range(start, start + num_frames)),
                    )
                )
    return windows
