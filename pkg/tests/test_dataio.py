import json

import numpy as np
import pytest

from laeo.core import BoundingBox, HeadTrack
from laeo.dataio import (
    AnnotationFormatError,
    AnnotationRecord,
    ImageDirFrameProvider,
    RunConfig,
    detections_by_frame,
    load_annotations,
    load_arrays,
    load_run_config,
    load_sample_archive,
    read_records,
    run_config_from_dict,
    save_arrays,
    save_run_config,
    save_sample_archive,
    track_record,
    write_records,
)
from laeo.synthgen import make_corpus


def rec(video, frame, kind, **payload):
    return {"video_id": video, "frame": frame, "kind": kind, "payload": payload}


def write_lines(path, objs):
    path.write_text("\n".join(json.dumps(o) for o in objs) + "\n")


class TestJsonl:
    def test_round_trip(self, tmp_path):
        records = [
            AnnotationRecord("v1", 0, "detection", {"box": [0, 0, 10, 10], "score": 0.9}),
            AnnotationRecord("v1", 0, "head_box", {"id": "h0", "box": [0, 0, 10, 10]}),
            AnnotationRecord("v1", 2, "shot_boundary", {}),
        ]
        path = tmp_path / "ann.jsonl"
        write_records(path, records)
        back = list(read_records(path))
        assert back == records
        # serialize -> parse -> serialize is byte-stable
        path2 = tmp_path / "ann2.jsonl"
        write_records(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_malformed_line_cites_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        lines = [json.dumps(rec("v", f, "detection", box=[0, 0, 5, 5], score=0.5)) for f in range(6)]
        lines.append("{ this is not json }")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(AnnotationFormatError, match="line 7"):
            list(read_records(path))

    def test_bad_score_rejected_with_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        write_lines(path, [rec("v", 0, "detection", box=[0, 0, 5, 5], score=1.7)])
        with pytest.raises(AnnotationFormatError, match="line 1"):
            list(read_records(path))

    def test_duplicate_box_id_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        write_lines(
            path,
            [
                rec("v", 0, "head_box", id="h0", box=[0, 0, 5, 5]),
                rec("v", 0, "head_box", id="h0", box=[10, 0, 15, 5]),
            ],
        )
        with pytest.raises(AnnotationFormatError, match="duplicate box id"):
            load_annotations(path)

    def test_pair_label_must_reference_boxes(self, tmp_path):
        path = tmp_path / "pair.jsonl"
        write_lines(
            path,
            [
                rec("v", 0, "head_box", id="h0", box=[0, 0, 5, 5]),
                rec("v", 0, "pair_label", a="h0", b="missing", label="laeo"),
            ],
        )
        with pytest.raises(AnnotationFormatError, match="missing box"):
            load_annotations(path)

    def test_detections_round_trip_through_tracks(self, tmp_path):
        ann = tmp_path / "det.jsonl"
        write_lines(
            ann,
            [rec("v", f, "detection", box=[f, 0, f + 10, 10], score=0.8) for f in range(3)],
        )
        loaded = load_annotations(ann)
        first, dets = detections_by_frame(loaded, "v")
        assert first == 0 and [len(d) for d in dets] == [1, 1, 1]

        t = HeadTrack(0, 0, (BoundingBox(0, 0, 10, 10),) * 2, (0.5, 0.6), (False, False))
        out = tmp_path / "tracks.jsonl"
        write_records(out, [track_record("v", t)])
        assert load_annotations(out).tracks["v"][0] == t


class TestRunConfig:
    def test_defaults_materialize(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{}")
        cfg = load_run_config(path)
        assert cfg == RunConfig()
        assert cfg.model.num_frames == 10
        assert cfg.train.lr_init == 1e-4
        assert cfg.linker.top_n == 10

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown top-level"):
            run_config_from_dict({"nope": 1})
        with pytest.raises(ValueError, match="unknown keys"):
            run_config_from_dict({"train": {"nope": 1}})

    def test_round_trip(self, tmp_path):
        cfg = run_config_from_dict(
            {"seed": 5, "train": {"lr_init": 5e-5}, "linker": {"top_n": 3}}
        )
        path = tmp_path / "cfg.json"
        save_run_config(path, cfg)
        assert load_run_config(path) == cfg


class TestArchives:
    def test_save_arrays_byte_identical(self, tmp_path):
        arrays = {"a": np.arange(12, dtype=np.float32).reshape(3, 4), "b": np.ones(5, np.uint8)}
        p1, p2 = tmp_path / "x1.npz", tmp_path / "x2.npz"
        save_arrays(p1, arrays)
        save_arrays(p2, arrays)
        assert p1.read_bytes() == p2.read_bytes()
        back = load_arrays(p1)
        np.testing.assert_array_equal(back["a"], arrays["a"])
        np.testing.assert_array_equal(back["b"], arrays["b"])

    def test_sample_archive_round_trip(self, tmp_path):
        samples = make_corpus(2, 2, seed=3)
        path = tmp_path / "corpus.npz"
        save_sample_archive(path, samples)
        back = load_sample_archive(path)
        assert len(back) == 4
        for orig, loaded in zip(samples, back):
            assert loaded.label == orig.label
            np.testing.assert_allclose(loaded.left_crops, orig.left_crops, atol=1e-6)
            np.testing.assert_allclose(loaded.head_map, orig.head_map, atol=1e-7)
            np.testing.assert_allclose(
                loaded.geometry.as_array(), orig.geometry.as_array(), atol=1e-12
            )

    def test_sample_archive_deterministic(self, tmp_path):
        samples = make_corpus(2, 2, seed=3)
        p1, p2 = tmp_path / "c1.npz", tmp_path / "c2.npz"
        save_sample_archive(p1, samples)
        save_sample_archive(p2, samples)
        assert p1.read_bytes() == p2.read_bytes()


class TestFrameProvider:
    def test_reads_numbered_frames(self, tmp_path):
        from PIL import Image

        rng = np.random.default_rng(0)
        frames = [rng.integers(0, 255, size=(48, 72, 3)).astype(np.uint8) for _ in range(3)]
        for i, frame in enumerate(frames):
            Image.fromarray(frame).save(tmp_path / f"{i:05d}.png")
        provider = ImageDirFrameProvider(tmp_path)
        assert len(provider) == 3
        assert provider.frame_size == (72, 48)
        np.testing.assert_array_equal(provider.frame(1), frames[1])
        with pytest.raises(IndexError):
            provider.frame(3)

    def test_empty_dir_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ImageDirFrameProvider(tmp_path)
