"""Aggregate pairwise gaze evidence into a character relationship graph.

For every character pair: count the frames they share a scene, the frames
they spend looking at each other, and their mean pair score over shared
frames. Edge weight is the mean score; the frame ratio is reported
alongside since both are useful relationship proxies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .core import HeadTrack
from .evaluation import FrameScore

# Track annotations that mark unusable tracks rather than characters.
IGNORED_MARKERS = frozenset({"IGNORED", "WRONG"})

DEFAULT_LAEO_THRESHOLD = 0.5


@dataclass(frozen=True)
class CharacterTrackLabel:
    """Maps one head track to a character name (or an ignore marker)."""

    track_id: int
    character_name: str


@dataclass(frozen=True)
class SocialEdge:
    """Relationship evidence for one unordered character pair."""

    char_a: str
    char_b: str
    cooccur_frames: int
    laeo_frames: int
    mean_laeo_score: float
    ratio: float

    def __post_init__(self):
        if self.char_a > self.char_b:
            raise ValueError("edge endpoints must be in sorted order")
        if self.char_a == self.char_b:
            raise ValueError("no self-edges")
        if self.laeo_frames > self.cooccur_frames:
            raise ValueError("laeo_frames cannot exceed cooccur_frames")


def _character_map(labels: Iterable[CharacterTrackLabel]) -> dict[int, str]:
    out: dict[int, str] = {}
    for label in labels:
        if label.track_id in out:
            raise ValueError(f"track {label.track_id} labeled twice")
        out[label.track_id] = label.character_name
    return {tid: name for tid, name in out.items() if name not in IGNORED_MARKERS}


def character_frames(
    tracks: Sequence[HeadTrack], labels: Iterable[CharacterTrackLabel]
) -> dict[str, set[int]]:
    """Frames where each character has at least one active track."""
    char_of = _character_map(labels)
    frames: dict[str, set[int]] = {}
    for track in tracks:
        name = char_of.get(track.track_id)
        if name is None:
            continue
        frames.setdefault(name, set()).update(range(track.start_frame, track.end_frame + 1))
    return frames


def cooccurrence(
    tracks: Sequence[HeadTrack], labels: Iterable[CharacterTrackLabel]
) -> dict[tuple[str, str], set[int]]:
    """Shared-scene frames per unordered character pair (no self-pairs)."""
    frames = character_frames(tracks, labels)
    names = sorted(frames)
    out: dict[tuple[str, str], set[int]] = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            shared = frames[a] & frames[b]
            if shared:
                out[(a, b)] = shared
    return out


def friendsness(
    char_a: str,
    char_b: str,
    cooccur: set[int],
    frame_scores: Mapping[int, float],
    laeo_threshold: float = DEFAULT_LAEO_THRESHOLD,
) -> SocialEdge | None:
    """Build one edge from shared frames and per-frame pair scores.

    Frames without a score count as 0 toward the mean and never count as
    looking-at-each-other frames. Returns None when the pair never shares a
    frame (no edge).
    """
    if not cooccur:
        return None
    a, b = sorted((char_a, char_b))
    laeo_frames = sum(1 for f in cooccur if frame_scores.get(f, 0.0) >= laeo_threshold)
    mean_score = sum(frame_scores.get(f, 0.0) for f in cooccur) / len(cooccur)
    return SocialEdge(
        char_a=a,
        char_b=b,
        cooccur_frames=len(cooccur),
        laeo_frames=laeo_frames,
        mean_laeo_score=mean_score,
        ratio=laeo_frames / len(cooccur),
    )


def aggregate_social_edges(
    tracks: Sequence[HeadTrack],
    labels: Iterable[CharacterTrackLabel],
    frame_scores: Iterable[FrameScore],
    laeo_threshold: float = DEFAULT_LAEO_THRESHOLD,
) -> list[SocialEdge]:
    """Full aggregation: track-pair frame scores -> character-pair edges.

    When several track pairs map to the same character pair in a frame, the
    frame keeps the highest score.
    """
    char_of = _character_map(labels)
    shared = cooccurrence(tracks, labels)
    scores: dict[tuple[str, str], dict[int, float]] = {}
    for fs in frame_scores:
        ca = char_of.get(fs.pair[0])
        cb = char_of.get(fs.pair[1])
        if ca is None or cb is None or ca == cb:
            continue
        key = (ca, cb) if ca <= cb else (cb, ca)
        per_frame = scores.setdefault(key, {})
        per_frame[fs.frame_index] = max(per_frame.get(fs.frame_index, 0.0), fs.score)

    edges = []
    for key, frames in sorted(shared.items()):
        edge = friendsness(key[0], key[1], frames, scores.get(key, {}), laeo_threshold)
        if edge is not None:
            edges.append(edge)
    return edges


def rank_edges(edges: Iterable[SocialEdge]) -> list[SocialEdge]:
    """Strongest relationship first; ties alphabetical."""
    return sorted(edges, key=lambda e: (-e.mean_laeo_score, e.char_a, e.char_b))


def build_graph(edges: Iterable[SocialEdge]) -> dict:
    """JSON-ready undirected graph: nodes plus rank-ordered weighted edges."""
    ranked = rank_edges(edges)
    nodes = sorted({n for e in ranked for n in (e.char_a, e.char_b)})
    return {
        "nodes": nodes,
        "edges": [
            {
                "a": e.char_a,
                "b": e.char_b,
                "weight": e.mean_laeo_score,
                "ratio": e.ratio,
                "frames": e.cooccur_frames,
            }
            for e in ranked
        ],
    }


def edges_from_graph(graph: Mapping) -> list[SocialEdge]:
    """Inverse of build_graph, for round-tripping through the JSON file."""
    out = []
    for e in graph["edges"]:
        out.append(
            SocialEdge(
                char_a=e["a"],
                char_b=e["b"],
                cooccur_frames=e["frames"],
                laeo_frames=round(e["ratio"] * e["frames"]),
                mean_laeo_score=e["weight"],
                ratio=e["ratio"],
            )
        )
    return out
