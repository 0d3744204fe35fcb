"""Command-line surface gluing the pipeline end to end.

Commands: track, score, eval, pretrain, train, synth, social,
render-headmap. Every command takes a single declarative config file plus
dotted overrides, and writes a manifest (inputs, config digest, seed,
outputs) next to its output for reproducibility.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import (
    BoundingBox,
    TrackPairSample,
    crop_and_resize,
    normalize_crop,
)
from .dataio import (
    AnnotationFormatError,
    AnnotationRecord,
    AnnotationSet,
    ImageDirFrameProvider,
    RunConfig,
    detections_by_frame,
    file_digest,
    load_annotations,
    load_arrays,
    load_run_config,
    load_sample_archive,
    run_config_from_dict,
    save_arrays,
    save_sample_archive,
    track_record,
    write_manifest,
    write_records,
)
from .evaluation import (
    GroundTruthPair,
    ScoredPair,
    ZeroPositivesError,
    compute_ap,
    frame_level_scores,
    ranked_ap,
    shot_level_score,
)
from .headmap import geometry_tuple, render_head_map
from .model import (
    DigestMismatchError,
    batch_probabilities,
    config_digest,
    restore_model,
    save_checkpoint,
)
from .pipeline import TrainingDivergedError, pretrain_head_pose, train_laeo
from .social import CharacterTrackLabel, aggregate_social_edges, build_graph
from .synthgen import generate_pose_dataset, load_labeled_heads, make_corpus, replicate_to_sequence
from .tracker import PairWindow, extract_pair_windows, link

# Crop extraction is cached under this directory when the variable is set.
CACHE_ENV_VAR = "LAEO_CACHE_DIR"


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _parse_override(raw: str) -> tuple[str, object]:
    if "=" not in raw:
        raise ValueError(f"override {raw!r} is not of the form key.path=value")
    key, value = raw.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key, parsed


def _apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    data = asdict(config)
    for raw in overrides:
        key, value = _parse_override(raw)
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            if part not in node:
                raise ValueError(f"unknown config path {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ValueError(f"unknown config path {key!r}")
        node[parts[-1]] = value
    return run_config_from_dict(data)


def _load_config(args) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    if args.override:
        config = _apply_overrides(config, args.override)
    if args.seed is not None:
        config = _apply_overrides(config, [f"seed={args.seed}"])
    return config


def _manifest_path(output) -> Path:
    return Path(str(output) + ".manifest.json")


# ---------------------------------------------------------------------------
# Sample assembly from tracks + frames
# ---------------------------------------------------------------------------


def _expand_box(box: BoundingBox, factor: float) -> BoundingBox:
    if factor == 1.0:
        return box
    cx, cy = box.center
    hw, hh = 0.5 * box.width * factor, 0.5 * box.height * factor
    return BoundingBox(cx - hw, cy - hh, cx + hw, cy + hh)


def fill_window(
    window: PairWindow,
    provider: ImageDirFrameProvider,
    tracks_by_id: dict,
    config: RunConfig,
) -> TrackPairSample:
    """Fill a pair window's crops, head map and geometry from video frames."""
    factor = config.crop_expansion
    left_crops = []
    right_crops = []
    for offset, frame_index in enumerate(window.frames):
        frame = provider.frame(frame_index)
        left_crops.append(crop_and_resize(frame, _expand_box(window.left_boxes[offset], factor)))
        right_crops.append(crop_and_resize(frame, _expand_box(window.right_boxes[offset], factor)))

    central = window.central_frame
    central_heads = []
    left_idx = right_idx = -1
    for track in sorted(tracks_by_id.values(), key=lambda t: t.track_id):
        if not track.covers(central):
            continue
        if track.track_id == window.left_track_id:
            left_idx = len(central_heads)
        elif track.track_id == window.right_track_id:
            right_idx = len(central_heads)
        central_heads.append(track.box_at(central))

    frame_size = provider.frame_size
    head_map = render_head_map(central_heads, left_idx, right_idx, frame_size, config.headmap)
    mid = window.num_frames // 2
    geometry = geometry_tuple(window.left_boxes[mid], window.right_boxes[mid], frame_size)
    return TrackPairSample(
        left_crops=normalize_crop(np.stack(left_crops)),
        right_crops=normalize_crop(np.stack(right_crops)),
        head_map=head_map.astype(np.float32),
        geometry=geometry,
        label=None,
    )


def _frames_dir_for(video_id: str, frames_root: Path) -> Path:
    candidate = frames_root / video_id
    return candidate if candidate.is_dir() else frames_root


def _window_record(video_id: str, window: PairWindow, score: float) -> AnnotationRecord:
    mid = window.num_frames // 2
    return AnnotationRecord(
        video_id=video_id,
        frame=window.central_frame,
        kind="window_score",
        payload={
            "left_track": window.left_track_id,
            "right_track": window.right_track_id,
            "start_frame": window.start_frame,
            "num_frames": window.num_frames,
            "left_box": window.left_boxes[mid].as_list(),
            "right_box": window.right_boxes[mid].as_list(),
            "score": float(score),
        },
    )


def _rebuild_windows(annotations: AnnotationSet, video_id: str) -> list[tuple[PairWindow, float]]:
    """Window scores + tracks records -> (PairWindow, score) pairs."""
    tracks_by_id = {t.track_id: t for t in annotations.tracks.get(video_id, [])}
    out = []
    for payload in annotations.window_scores.get(video_id, []):
        left = tracks_by_id[int(payload["left_track"])]
        right = tracks_by_id[int(payload["right_track"])]
        start = int(payload["start_frame"])
        n = int(payload["num_frames"])
        window = PairWindow(
            left_track_id=left.track_id,
            right_track_id=right.track_id,
            start_frame=start,
            left_boxes=tuple(left.box_at(f) for f in range(start, start + n)),
            right_boxes=tuple(right.box_at(f) for f in range(start, start + n)),
        )
        out.append((window, float(payload["score"])))
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _track_one_video(job):
    video_id, first, dets, linker = job
    return video_id, link(dets, linker, start_frame=first)


def cmd_track(args) -> int:
    config = _load_config(args)
    annotations = load_annotations(args.detections)
    jobs = []
    for video_id in sorted(annotations.detections):
        first, dets = detections_by_frame(annotations, video_id)
        jobs.append((video_id, first, dets, config.linker))
    if args.workers > 1 and len(jobs) > 1:
        # Linking is independent per video; output order stays sorted.
        import multiprocessing

        with multiprocessing.Pool(min(args.workers, len(jobs))) as pool:
            results = pool.map(_track_one_video, jobs)
    else:
        results = [_track_one_video(job) for job in jobs]
    records = []
    for video_id, tracks in results:
        records.extend(track_record(video_id, t) for t in tracks)
    write_records(args.output, records)
    write_manifest(
        _manifest_path(args.output),
        "track",
        {"detections": args.detections},
        [args.output],
        config_digest(config.model),
        config.seed,
    )
    return 0


def _cached_samples(cache_file: Path) -> list[TrackPairSample]:
    from .core import GeometryTuple

    data = load_arrays(cache_file)
    return [
        TrackPairSample(
            left_crops=data["left_crops"][i],
            right_crops=data["right_crops"][i],
            head_map=data["head_maps"][i],
            geometry=GeometryTuple(*data["geometry"][i]),
            label=None,
        )
        for i in range(len(data["geometry"]))
    ]


def _cache_samples(cache_file: Path, samples: list[TrackPairSample]) -> None:
    # Crops cached as float32 so warm runs reproduce cold-run scores exactly.
    save_arrays(
        cache_file,
        {
            "left_crops": np.stack([s.left_crops for s in samples]),
            "right_crops": np.stack([s.right_crops for s in samples]),
            "head_maps": np.stack([s.head_map for s in samples]),
            "geometry": np.stack([s.geometry.as_array() for s in samples]),
        },
    )


def cmd_score(args) -> int:
    config = _load_config(args)
    model = restore_model(args.checkpoint, expected_config=config.model)
    annotations = load_annotations(args.tracks)
    frames_root = Path(args.frames)
    cache_root = Path(os.environ[CACHE_ENV_VAR]) if os.environ.get(CACHE_ENV_VAR) else None
    if cache_root is not None:
        cache_root.mkdir(parents=True, exist_ok=True)

    records = []
    csv_rows = []
    for video_id in sorted(annotations.tracks):
        tracks = annotations.tracks[video_id]
        tracks_by_id = {t.track_id: t for t in tracks}
        frames_dir = _frames_dir_for(video_id, frames_root)
        windows = extract_pair_windows(tracks, config.model.num_frames, args.stride)
        if not windows:
            continue
        samples = None
        cache_file = None
        if cache_root is not None:
            key = hashlib.sha256(
                "|".join(
                    [
                        file_digest(args.tracks),
                        video_id,
                        str(args.stride),
                        str(config.model.num_frames),
                        repr(config.crop_expansion),
                        str(frames_dir.resolve()),
                    ]
                ).encode("utf-8")
            ).hexdigest()
            cache_file = cache_root / f"crops-{key}.npz"
            if cache_file.exists():
                samples = _cached_samples(cache_file)
        if samples is None:
            provider = ImageDirFrameProvider(frames_dir)
            samples = [fill_window(w, provider, tracks_by_id, config) for w in windows]
            if cache_file is not None:
                _cache_samples(cache_file, samples)
        scores = batch_probabilities(model, samples)
        scored = list(zip(windows, (float(s) for s in scores)))
        records.extend(_window_record(video_id, w, s) for w, s in scored)
        for fs in frame_level_scores(scored, tracks):
            csv_rows.append(
                [
                    video_id,
                    fs.frame_index,
                    json.dumps(fs.left_box.as_list()),
                    json.dumps(fs.right_box.as_list()),
                    f"{fs.score:.9f}",
                ]
            )

    write_records(args.output, records)
    csv_path = Path(args.output).with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "frame", "left_box", "right_box", "score"])
        writer.writerows(csv_rows)
    write_manifest(
        _manifest_path(args.output),
        "score",
        {"tracks": args.tracks, "checkpoint": args.checkpoint},
        [args.output, str(csv_path)],
        config_digest(config.model),
        config.seed,
    )
    return 0


def _read_scores_csv(path) -> list[tuple[str, int, ScoredPair]]:
    out = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                (
                    row["video_id"],
                    int(row["frame"]),
                    ScoredPair(
                        frame_index=int(row["frame"]),
                        left_box=BoundingBox(*json.loads(row["left_box"])),
                        right_box=BoundingBox(*json.loads(row["right_box"])),
                        score=float(row["score"]),
                    ),
                )
            )
    return out


def _frame_level_report(args, gt: AnnotationSet) -> dict:
    box_kind = "head_box" if args.mode == "iou_heads" else "body_box"
    key_ids: dict[tuple[str, int], int] = {}

    def global_frame(video_id: str, frame: int) -> int:
        return key_ids.setdefault((video_id, frame), len(key_ids))

    ground_truth = []
    for video, frame, id_a, id_b, label in gt.pairs:
        boxes = gt.boxes[(video, frame)]
        kind_a, box_a = boxes[id_a]
        kind_b, box_b = boxes[id_b]
        if kind_a != box_kind or kind_b != box_kind:
            continue
        ground_truth.append(GroundTruthPair(global_frame(video, frame), box_a, box_b, label))

    predictions = [
        ScoredPair(global_frame(video, frame), sp.left_box, sp.right_box, sp.score)
        for video, frame, sp in _read_scores_csv(args.scores)
    ]
    result = compute_ap(predictions, ground_truth, args.mode)
    return {
        "level": "frame",
        "mode": args.mode,
        "ap": result.ap,
        "num_positives": result.num_positives,
        "num_predictions": result.num_predictions,
        "curve": result,
    }


def _shots_for_video(gt: AnnotationSet, video_id: str, last_frame: int) -> list[tuple[int, int]]:
    boundaries = gt.shot_boundaries.get(video_id, [])
    starts = sorted(set([0] + [b for b in boundaries if b > 0]))
    shots = []
    for i, start in enumerate(starts):
        end = (starts[i + 1] - 1) if i + 1 < len(starts) else last_frame
        if end >= start:
            shots.append((start, end))
    return shots


def _shot_level_report(args, gt: AnnotationSet) -> dict:
    scores_ann = load_annotations(args.scores)
    shot_scores = []
    shot_labels = []
    for video_id in sorted(gt.video_ids | scores_ann.video_ids):
        scored = _rebuild_windows(scores_ann, video_id)
        frame_scores = frame_level_scores(scored, scores_ann.tracks.get(video_id, []))
        laeo_frames = {
            frame for v, frame, *_rest, label in gt.pairs if v == video_id and label == "laeo"
        }
        last = 0
        if frame_scores:
            last = max(fs.frame_index for fs in frame_scores)
        if laeo_frames:
            last = max(last, max(laeo_frames))
        for start, end in _shots_for_video(gt, video_id, last):
            per_pair: dict[tuple[int, int], list[float]] = {}
            for fs in frame_scores:
                if start <= fs.frame_index <= end:
                    per_pair.setdefault(fs.pair, []).append(fs.score)
            score = shot_level_score(per_pair) if per_pair else 0.0
            shot_scores.append(score)
            shot_labels.append(any(start <= f <= end for f in laeo_frames))

    num_pos = sum(shot_labels)
    if num_pos == 0:
        raise ZeroPositivesError("no positive shots in ground truth")
    result = ranked_ap(shot_scores, shot_labels, num_pos)
    return {
        "level": "shot",
        "mode": args.mode,
        "ap": result.ap,
        "num_positives": result.num_positives,
        "num_predictions": result.num_predictions,
        "curve": result,
    }


def cmd_eval(args) -> int:
    config = _load_config(args)
    gt = load_annotations(args.ground_truth)
    try:
        report = _frame_level_report(args, gt) if args.level == "frame" else _shot_level_report(args, gt)
    except ZeroPositivesError as exc:
        report = {"level": args.level, "mode": args.mode, "ap": None, "error": f"zero_positives: {exc}"}

    curve = report.pop("curve", None)
    curve_path = None
    if curve is not None:
        curve_path = str(Path(args.output).with_suffix(".pr.csv"))
        with open(curve_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "precision", "recall"])
            for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
                writer.writerow([f"{t:.9f}", f"{p:.9f}", f"{r:.9f}"])
    report["pr_curve_csv"] = curve_path

    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(
        _manifest_path(args.output),
        "eval",
        {"scores": args.scores, "ground_truth": args.ground_truth},
        [args.output] + ([curve_path] if curve_path else []),
        config_digest(config.model),
        config.seed,
    )
    print(f"ap={report['ap']}" if report["ap"] is not None else "ap=undefined (no positives)")
    return 0


def cmd_pretrain(args) -> int:
    config = _load_config(args)
    train_cfg = config.train
    if args.epochs is not None:
        train_cfg = _apply_overrides(config, [f"train.epochs={args.epochs}"]).train
    if args.annotations:
        heads = load_labeled_heads(args.annotations, args.images_root)
        rng = np.random.default_rng(config.seed)
        dataset = [
            (
                replicate_to_sequence(
                    h, config.model.num_frames, config.augment, int(rng.integers(2**32))
                ),
                h.pose.normalized(),
            )
            for h in heads
        ]
    else:
        dataset = generate_pose_dataset(
            args.num_samples, config.model.num_frames, config.seed, config.augment
        )
    model, log = pretrain_head_pose(dataset, train_cfg, config.model)
    save_checkpoint(args.output, model, extra={"stage": "pretrain"})
    _write_log_csv(Path(args.output).with_suffix(".log.csv"), log)
    write_manifest(
        _manifest_path(args.output),
        "pretrain",
        {"annotations": args.annotations} if args.annotations else {},
        [args.output],
        config_digest(config.model),
        config.seed,
    )
    print(f"final_loss={log[-1].loss:.6f}")
    return 0


def _write_log_csv(path, log) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "loss", "val_AP", "lr"])
        for row in log:
            writer.writerow(
                [
                    row.epoch,
                    "" if row.step is None else row.step,
                    "" if row.loss is None else f"{row.loss:.9f}",
                    "" if row.val_ap is None else f"{row.val_ap:.9f}",
                    f"{row.lr:.3e}",
                ]
            )


def cmd_train(args) -> int:
    config = _load_config(args)
    train_cfg = config.train
    if args.epochs is not None:
        train_cfg = _apply_overrides(config, [f"train.epochs={args.epochs}"]).train
    synth = load_sample_archive(args.synth)
    real = load_sample_archive(args.real) if args.real else None
    pretrained = restore_model(args.pretrained, expected_config=config.model) if args.pretrained else None
    result = train_laeo(real, synth, train_cfg, config.model, pretrained)
    save_checkpoint(args.output, result.model, extra={"stage": "train"})
    _write_log_csv(Path(args.output).with_suffix(".log.csv"), result.log)
    write_manifest(
        _manifest_path(args.output),
        "train",
        {"synth": args.synth, **({"real": args.real} if args.real else {}),
         **({"pretrained": args.pretrained} if args.pretrained else {})},
        [args.output],
        config_digest(config.model),
        config.seed,
    )
    acc = result.final_train_accuracy
    print(f"train_accuracy={acc:.4f}" if acc is not None else "train_accuracy=n/a")
    return 0


def cmd_synth(args) -> int:
    config = _load_config(args)
    samples = make_corpus(
        args.num_positive,
        args.num_negative,
        seed=config.seed,
        num_frames=config.model.num_frames,
        aug=config.augment,
        map_spec=config.headmap,
    )
    save_sample_archive(args.output, samples)
    write_manifest(
        _manifest_path(args.output),
        "synth",
        {},
        [args.output],
        config_digest(config.model),
        config.seed,
        extra={"num_positive": args.num_positive, "num_negative": args.num_negative},
    )
    return 0


def _read_label_csv(path) -> list[CharacterTrackLabel]:
    labels = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() == "track_id":
                continue
            labels.append(CharacterTrackLabel(int(row[0]), row[1].strip()))
    return labels


def _plot_graph(graph: dict, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    nodes = graph["nodes"]
    angles = {n: 2 * np.pi * i / max(1, len(nodes)) for i, n in enumerate(nodes)}
    pos = {n: (np.cos(a), np.sin(a)) for n, a in angles.items()}
    fig, ax = plt.subplots(figsize=(6, 6))
    for edge in graph["edges"]:
        (x1, y1), (x2, y2) = pos[edge["a"]], pos[edge["b"]]
        ax.plot([x1, x2], [y1, y2], color="tab:blue", linewidth=0.5 + 6 * edge["weight"], alpha=0.7)
    for n, (x, y) in pos.items():
        ax.scatter([x], [y], s=300, color="tab:orange", zorder=3)
        ax.annotate(n, (x, y), ha="center", va="center", fontsize=8, zorder=4)
    ax.set_axis_off()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def cmd_social(args) -> int:
    config = _load_config(args)
    scores_ann = load_annotations(args.scores)
    labels = _read_label_csv(args.labels)
    all_edges = []
    for video_id in sorted(scores_ann.tracks):
        tracks = scores_ann.tracks[video_id]
        scored = _rebuild_windows(scores_ann, video_id)
        frame_scores = frame_level_scores(scored, tracks)
        all_edges.extend(
            aggregate_social_edges(tracks, labels, frame_scores, args.laeo_threshold)
        )
    graph = build_graph(all_edges)
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(graph, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs = [args.output]
    if args.plot:
        _plot_graph(graph, args.plot)
        outputs.append(args.plot)
    write_manifest(
        _manifest_path(args.output),
        "social",
        {"scores": args.scores, "labels": args.labels},
        outputs,
        config_digest(config.model),
        config.seed,
    )
    return 0


def cmd_render_headmap(args) -> int:
    config = _load_config(args)
    annotations = load_annotations(args.annotations)
    key = (args.video, args.frame)
    boxes = annotations.boxes.get(key)
    if not boxes:
        raise AnnotationFormatError(f"no boxes for video {args.video!r} frame {args.frame}")
    ids = sorted(boxes)
    left_id, right_id = (s.strip() for s in args.pair.split(","))
    heads = [boxes[i][1] for i in ids]
    try:
        left_idx, right_idx = ids.index(left_id), ids.index(right_id)
    except ValueError as exc:
        raise AnnotationFormatError(f"pair ids must exist in the frame: {exc}") from exc
    w, h = (float(v) for v in args.frame_size.split("x"))
    head_map = render_head_map(heads, left_idx, right_idx, (w, h), config.headmap)

    from PIL import Image

    eight_bit = np.clip(np.rint(head_map * 255), 0, 255).astype(np.uint8)
    Image.fromarray(eight_bit, mode="RGB").save(args.output)  # PNG: lossless
    write_manifest(
        _manifest_path(args.output),
        "render-headmap",
        {"annotations": args.annotations},
        [args.output],
        config_digest(config.model),
        config.seed,
    )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="run config JSON file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument(
        "--override", action="append", default=[], metavar="K=V",
        help="dotted config override, e.g. train.lr_init=5e-5 (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laeo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="link detections into head tracks")
    p.add_argument("detections", help="detections JSON-lines file")
    p.add_argument("--output", required=True)
    p.add_argument("--workers", type=int, default=1, help="videos linked in parallel")
    _add_common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("score", help="score co-existing track pairs")
    p.add_argument("tracks", help="tracks JSON-lines file")
    p.add_argument("--frames", required=True, help="frames root (dir of images, or dir per video)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True, help="window-score JSON-lines output (.csv written too)")
    p.add_argument("--stride", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="average precision against ground truth")
    p.add_argument("scores", help="frame-score CSV (frame level) or window-score JSONL (shot level)")
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--mode", choices=["iou_heads", "ioha_bodies"], default="iou_heads")
    p.add_argument("--level", choices=["frame", "shot"], default="frame")
    p.add_argument("--output", required=True, help="JSON report path (.pr.csv written too)")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pretrain", help="pretrain the head-pose branch")
    p.add_argument("--annotations", help="pose-labeled head crops (text schema); procedural if omitted")
    p.add_argument("--images-root", default=None)
    p.add_argument("--num-samples", type=int, default=256, help="procedural dataset size")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--output", required=True, help="checkpoint path")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train the pair classifier")
    p.add_argument("--synth", required=True, help="synthetic sample archive")
    p.add_argument("--real", default=None, help="real sample archive")
    p.add_argument("--pretrained", default=None, help="pretrained head-pose checkpoint")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--output", required=True, help="checkpoint path")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="generate a synthetic sample archive")
    p.add_argument("--num-positive", type=int, required=True)
    p.add_argument("--num-negative", type=int, required=True)
    p.add_argument("--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("social", help="character relationship graph from scores")
    p.add_argument("scores", help="window-score JSON-lines file (with track records)")
    p.add_argument("--labels", required=True, help="CSV mapping track_id to character name")
    p.add_argument("--laeo-threshold", type=float, default=0.5)
    p.add_argument("--output", required=True, help="graph JSON path")
    p.add_argument("--plot", default=None, help="optional plot image path")
    _add_common(p)
    p.set_defaults(func=cmd_social)

    p = sub.add_parser("render-headmap", help="export a head map as a PNG")
    p.add_argument("annotations", help="JSON-lines file with head_box records")
    p.add_argument("--video", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--pair", required=True, metavar="LEFT_ID,RIGHT_ID")
    p.add_argument("--frame-size", required=True, metavar="WxH")
    p.add_argument("--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_render_headmap)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        AnnotationFormatError,
        DigestMismatchError,
        TrainingDivergedError,
        FileNotFoundError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
