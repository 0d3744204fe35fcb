"""Average-precision scoring of pair predictions against ground truth,
plus the frame- and shot-level score assembly used before ranking.

Predictions are ranked by score; a prediction counts as correct when both
of its head boxes land on an unconsumed positive ground-truth pair with
overlap above 0.5. AP is the exact area under the resulting
precision-recall staircase (no interpolation), integrated over distinct
score levels so tied scores enter together.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import BoundingBox, HeadTrack, intersection_over_head_area, iou
from .tracker import PairWindow

MATCH_OVERLAP = 0.5
SMOOTH_WINDOW = 5

LABEL_STR_LAEO = "laeo"
LABEL_STR_NOT_LAEO = "not_laeo"
LABEL_STR_AMBIGUOUS = "ambiguous"


class ZeroPositivesError(ValueError):
    """No positive ground-truth pairs: AP is undefined."""


class EmptyShotError(ValueError):
    """A shot with no scored frames cannot produce a shot score."""


@dataclass(frozen=True)
class ScoredPair:
    """One frame's prediction for a head pair."""

    frame_index: int
    left_box: BoundingBox
    right_box: BoundingBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"pair score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruthPair:
    """Annotated pair; boxes are heads or whole bodies depending on the
    dataset's annotation style (see the matching mode)."""

    frame_index: int
    box_a: BoundingBox
    box_b: BoundingBox
    label: str

    def __post_init__(self):
        if self.label not in (LABEL_STR_LAEO, LABEL_STR_NOT_LAEO, LABEL_STR_AMBIGUOUS):
            raise ValueError(f"unknown pair label {self.label!r}")


def _overlap(pred_box: BoundingBox, gt_box: BoundingBox, mode: str) -> float:
    if mode == "iou_heads":
        return iou(pred_box, gt_box)
    if mode == "ioha_bodies":
        return intersection_over_head_area(pred_box, gt_box)
    raise ValueError(f"unknown matching mode {mode!r}")


def match_pair(pred: ScoredPair, gt: GroundTruthPair, mode: str = "iou_heads") -> bool:
    """Both predicted heads must land on the ground-truth boxes one-to-one
    with overlap > 0.5 (either assignment of left/right to a/b)."""
    if pred.frame_index != gt.frame_index:
        return False
    straight = min(
        _overlap(pred.left_box, gt.box_a, mode), _overlap(pred.right_box, gt.box_b, mode)
    )
    crossed = min(
        _overlap(pred.left_box, gt.box_b, mode), _overlap(pred.right_box, gt.box_a, mode)
    )
    return max(straight, crossed) > MATCH_OVERLAP


@dataclass(frozen=True)
class ApResult:
    """AP with the PR staircase it was integrated from."""

    ap: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    thresholds: tuple[float, ...]
    num_positives: int
    num_predictions: int


def ranked_ap(scores: Sequence[float], correct: Sequence[bool], num_positives: int) -> ApResult:
    """Exact area under the precision-recall staircase of a ranked list.

    Tied scores are processed as one group, so the result is independent of
    their relative order and matches a sweep over distinct thresholds.
    """
    if num_positives < 1:
        raise ZeroPositivesError("need at least one positive ground-truth pair")
    scores = np.asarray(scores, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    if scores.shape != correct.shape:
        raise ValueError("scores and correctness flags must align")

    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    correct = correct[order]

    ap = 0.0
    tp = fp = 0
    prev_recall = 0.0
    precision_pts: list[float] = []
    recall_pts: list[float] = []
    thresholds: list[float] = []
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j < n and scores[j] == scores[i]:
            j += 1
        tp += int(np.count_nonzero(correct[i:j]))
        fp += (j - i) - int(np.count_nonzero(correct[i:j]))
        precision = tp / (tp + fp)
        recall = tp / num_positives
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        precision_pts.append(precision)
        recall_pts.append(recall)
        thresholds.append(float(scores[i]))
        i = j

    return ApResult(
        ap=float(ap),
        precision=tuple(precision_pts),
        recall=tuple(recall_pts),
        thresholds=tuple(thresholds),
        num_positives=num_positives,
        num_predictions=n,
    )


def compute_ap(
    predictions: Sequence[ScoredPair],
    ground_truth: Sequence[GroundTruthPair],
    mode: str = "iou_heads",
) -> ApResult:
    """Match predictions against ground truth and integrate AP.

    Matching walks predictions in rank order (score desc, ties by frame then
    left-box x1 then y1); each positive pair is consumed at most once, by
    the candidate with the largest combined overlap. Predictions that only
    land on an ambiguous pair are excluded rather than counted as false
    positives; unmatched predictions are false positives.
    """
    positives = [gt for gt in ground_truth if gt.label == LABEL_STR_LAEO]
    ambiguous = [gt for gt in ground_truth if gt.label == LABEL_STR_AMBIGUOUS]
    if not positives:
        raise ZeroPositivesError("ground truth contains no positive pairs")

    by_frame: dict[int, list[int]] = {}
    for idx, gt in enumerate(positives):
        by_frame.setdefault(gt.frame_index, []).append(idx)
    ambiguous_by_frame: dict[int, list[GroundTruthPair]] = {}
    for gt in ambiguous:
        ambiguous_by_frame.setdefault(gt.frame_index, []).append(gt)

    ranked = sorted(
        predictions, key=lambda p: (-p.score, p.frame_index, p.left_box.x1, p.left_box.y1)
    )
    consumed: set[int] = set()
    kept_scores: list[float] = []
    kept_correct: list[bool] = []
    for pred in ranked:
        best_idx = None
        best_quality = 0.0
        for idx in by_frame.get(pred.frame_index, ()):
            if idx in consumed:
                continue
            gt = positives[idx]
            if not match_pair(pred, gt, mode):
                continue
            quality = max(
                _overlap(pred.left_box, gt.box_a, mode) + _overlap(pred.right_box, gt.box_b, mode),
                _overlap(pred.left_box, gt.box_b, mode) + _overlap(pred.right_box, gt.box_a, mode),
            )
            if best_idx is None or quality > best_quality:
                best_idx = idx
                best_quality = quality
        if best_idx is not None:
            consumed.add(best_idx)
            kept_scores.append(pred.score)
            kept_correct.append(True)
            continue
        if any(
            match_pair(pred, gt, mode) for gt in ambiguous_by_frame.get(pred.frame_index, ())
        ):
            continue
        kept_scores.append(pred.score)
        kept_correct.append(False)

    return ranked_ap(kept_scores, kept_correct, len(positives))


@dataclass(frozen=True)
class FrameScore:
    """Per-frame score for one track pair."""

    pair: tuple[int, int]
    frame_index: int
    left_box: BoundingBox
    right_box: BoundingBox
    score: float

    def as_scored_pair(self) -> ScoredPair:
        return ScoredPair(self.frame_index, self.left_box, self.right_box, self.score)


def frame_level_scores(
    scored_windows: Sequence[tuple[PairWindow, float]],
    tracks: Iterable[HeadTrack],
) -> list[FrameScore]:
    """Spread window scores onto frames.

    Each window's score belongs to its central frame; every other frame the
    pair's windows span (including the half-window margins at both ends)
    takes the score of the nearest central frame, earlier one on ties.
    """
    by_id = {t.track_id: t for t in tracks}
    by_pair: dict[tuple[int, int], list[tuple[int, float, PairWindow]]] = {}
    spans: dict[tuple[int, int], tuple[int, int]] = {}
    for window, score in scored_windows:
        key = tuple(sorted((window.left_track_id, window.right_track_id)))
        by_pair.setdefault(key, []).append((window.central_frame, float(score), window))
        lo, hi = window.start_frame, window.start_frame + window.num_frames - 1
        if key in spans:
            spans[key] = (min(spans[key][0], lo), max(spans[key][1], hi))
        else:
            spans[key] = (lo, hi)

    out: list[FrameScore] = []
    for key, centers in sorted(by_pair.items()):
        centers.sort(key=lambda c: c[0])
        center_frames = np.array([c[0] for c in centers])
        track_a, track_b = by_id[key[0]], by_id[key[1]]
        lo, hi = spans[key]
        for frame in range(lo, hi + 1):
            nearest = int(np.argmin(np.abs(center_frames - frame)))
            score = centers[nearest][1]
            ba, bb = track_a.box_at(frame), track_b.box_at(frame)
            if (ba.center[0], ba.center[1]) <= (bb.center[0], bb.center[1]):
                left, right = ba, bb
            else:
                left, right = bb, ba
            out.append(FrameScore(key, frame, left, right, score))
    return out


def smooth_scores(values: Sequence[float], window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Centered moving average; the window shrinks at the boundaries so a
    constant sequence stays constant."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    half = window // 2
    out = np.empty(n)
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        out[i] = values[lo:hi].mean()
    return out


def shot_level_score(
    frame_scores_by_pair: Mapping[tuple[int, int], Sequence[float]] | Iterable[Sequence[float]],
    window: int = SMOOTH_WINDOW,
) -> float:
    """One score per shot: smooth each pair's frame-score sequence with the
    centered moving average, then take the maximum over pairs and frames."""
    if isinstance(frame_scores_by_pair, Mapping):
        sequences = list(frame_scores_by_pair.values())
    else:
        sequences = list(frame_scores_by_pair)
    best = None
    for seq in sequences:
        if len(seq) == 0:
            continue
        peak = float(smooth_scores(seq, window).max())
        best = peak if best is None else max(best, peak)
    if best is None:
        raise EmptyShotError("shot contains no scored frames")
    return best
