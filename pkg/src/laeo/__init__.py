"""Toolkit for detecting people looking at each other in video: track
linking, the three-branch pair classifier, training, evaluation, and
social-graph aggregation."""

from .core import (
    BoundingBox,
    GeometryTuple,
    HeadDetection,
    HeadTrack,
    PoseAngles,
    TrackPairSample,
    crop_and_resize,
    intersection_over_head_area,
    iou,
    normalize_crop,
)
from .headmap import HeadMapSpec, geometry_tuple, render_head_map
from .model import LaeoNet, LaeoNetConfig, PoseRegressor, score_track_pair
from .tracker import LinkerConfig, PairWindow, extract_pair_windows, link_bidirectional, link_tracks

__all__ = [
    "BoundingBox",
    "GeometryTuple",
    "HeadDetection",
    "HeadMapSpec",
    "HeadTrack",
    "LaeoNet",
    "LaeoNetConfig",
    "LinkerConfig",
    "PairWindow",
    "PoseAngles",
    "PoseRegressor",
    "TrackPairSample",
    "crop_and_resize",
    "extract_pair_windows",
    "geometry_tuple",
    "intersection_over_head_area",
    "iou",
    "link_bidirectional",
    "link_tracks",
    "normalize_crop",
    "render_head_map",
    "score_track_pair",
]

__version__ = "0.1.0"
