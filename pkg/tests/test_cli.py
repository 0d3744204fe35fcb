import csv
import json

import numpy as np
import pytest
import torch

from laeo.cli import main
from laeo.core import BoundingBox, HeadTrack
from laeo.dataio import load_annotations, track_record, write_records, AnnotationRecord
from laeo.model import LaeoNet, LaeoNetConfig, save_checkpoint


def run(args):
    return main([str(a) for a in args])


def jl(video, frame, kind, **payload):
    return json.dumps({"video_id": video, "frame": frame, "kind": kind, "payload": payload})


@pytest.fixture
def video(tmp_path):
    """14-frame clip with two drifting heads, plus matching detections."""
    from PIL import Image

    frames_dir = tmp_path / "frames"
    frames_dir.mkdir()
    lines = []
    for f in range(14):
        img = np.full((96, 128, 3), 30, dtype=np.uint8)
        ax, ay = 10 + 0.5 * f, 20.0
        bx, by = 90 - 0.5 * f, 30.0
        img[int(ay) : int(ay) + 24, int(ax) : int(ax) + 20] = (200, 160, 140)
        img[int(by) : int(by) + 24, int(bx) : int(bx) + 20] = (150, 180, 210)
        Image.fromarray(img).save(frames_dir / f"{f:05d}.png")
        lines.append(jl("clip", f, "detection", box=[ax, ay, ax + 20, ay + 24], score=0.9))
        lines.append(jl("clip", f, "detection", box=[bx, by, bx + 20, by + 24], score=0.8))
    detections = tmp_path / "detections.jsonl"
    detections.write_text("\n".join(lines) + "\n")
    return frames_dir, detections


@pytest.fixture
def checkpoint(tmp_path):
    torch.manual_seed(123)
    model = LaeoNet(LaeoNetConfig())
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model)
    return path


class TestTrackCommand:
    def test_links_two_tracks(self, tmp_path, video):
        frames_dir, detections = video
        out = tmp_path / "tracks.jsonl"
        assert run(["track", detections, "--output", out]) == 0
        tracks = load_annotations(out).tracks["clip"]
        assert len(tracks) == 2
        assert all(t.start_frame == 0 and t.end_frame == 13 for t in tracks)
        assert (tmp_path / "tracks.jsonl.manifest.json").exists()

    def test_empty_detections_file(self, tmp_path):
        detections = tmp_path / "empty.jsonl"
        detections.write_text("")
        out = tmp_path / "tracks.jsonl"
        assert run(["track", detections, "--output", out]) == 0
        assert out.read_text() == ""

    def test_parallel_videos_match_sequential(self, tmp_path):
        lines = []
        for video in ("a", "b", "c"):
            offset = {"a": 0, "b": 40, "c": 80}[video]
            for f in range(8):
                lines.append(jl(video, f, "detection",
                                box=[offset + f, 0, offset + f + 12, 12], score=0.9))
        det = tmp_path / "multi.jsonl"
        det.write_text("\n".join(lines) + "\n")
        seq = tmp_path / "seq.jsonl"
        par = tmp_path / "par.jsonl"
        assert run(["track", det, "--output", seq]) == 0
        assert run(["track", det, "--output", par, "--workers", 3]) == 0
        assert seq.read_bytes() == par.read_bytes()
        loaded = load_annotations(par)
        assert sorted(loaded.tracks) == ["a", "b", "c"]

    def test_corrupt_line_cited(self, tmp_path, capsys):
        detections = tmp_path / "bad.jsonl"
        lines = [jl("v", f, "detection", box=[0, 0, 5, 5], score=0.5) for f in range(6)]
        lines.append("{ garbage")
        detections.write_text("\n".join(lines) + "\n")
        assert run(["track", detections, "--output", tmp_path / "t.jsonl"]) == 1
        assert "line 7" in capsys.readouterr().err


class TestScoreCommand:
    def test_window_contract_and_determinism(self, tmp_path, video, checkpoint):
        frames_dir, detections = video
        tracks = tmp_path / "tracks.jsonl"
        run(["track", detections, "--output", tracks])
        out1 = tmp_path / "scores1.jsonl"
        out2 = tmp_path / "scores2.jsonl"
        assert run(["score", tracks, "--frames", frames_dir, "--checkpoint", checkpoint,
                    "--output", out1]) == 0
        assert run(["score", tracks, "--frames", frames_dir, "--checkpoint", checkpoint,
                    "--output", out2]) == 0
        # 14 co-existing frames, K=10, stride 1 -> 5 windows
        windows = load_annotations(out1).window_scores["clip"]
        assert len(windows) == 5
        assert all(0.0 <= w["score"] <= 1.0 for w in windows)
        assert out1.read_bytes() == out2.read_bytes()
        csv1 = out1.with_suffix(".csv").read_bytes()
        csv2 = out2.with_suffix(".csv").read_bytes()
        assert csv1 == csv2
        with open(out1.with_suffix(".csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert {int(r["frame"]) for r in rows} == set(range(14))

    def test_digest_mismatch_refused(self, tmp_path, video, capsys):
        frames_dir, detections = video
        tracks = tmp_path / "tracks.jsonl"
        run(["track", detections, "--output", tracks])
        torch.manual_seed(0)
        other = LaeoNet(LaeoNetConfig(fusion_hidden_units=96))
        ckpt = tmp_path / "other.ckpt"
        save_checkpoint(ckpt, other)
        code = run(["score", tracks, "--frames", frames_dir, "--checkpoint", ckpt,
                    "--output", tmp_path / "s.jsonl"])
        assert code == 1
        assert "different architecture" in capsys.readouterr().err

    def test_cache_round_trip(self, tmp_path, video, checkpoint, monkeypatch):
        frames_dir, detections = video
        tracks = tmp_path / "tracks.jsonl"
        run(["track", detections, "--output", tracks])
        monkeypatch.setenv("LAEO_CACHE_DIR", str(tmp_path / "cache"))
        cold = tmp_path / "cold.jsonl"
        warm = tmp_path / "warm.jsonl"
        assert run(["score", tracks, "--frames", frames_dir, "--checkpoint", checkpoint,
                    "--output", cold]) == 0
        assert any((tmp_path / "cache").iterdir())
        assert run(["score", tracks, "--frames", frames_dir, "--checkpoint", checkpoint,
                    "--output", warm]) == 0
        assert cold.read_bytes() == warm.read_bytes()


class TestEvalCommand:
    def _gt_file(self, tmp_path, labels=("laeo",)):
        lines = []
        for frame, label in enumerate(labels):
            lines.append(jl("v", frame, "head_box", id="a", box=[0, 0, 10, 10]))
            lines.append(jl("v", frame, "head_box", id="b", box=[50, 0, 60, 10]))
            lines.append(jl("v", frame, "pair_label", a="a", b="b", label=label))
        path = tmp_path / "gt.jsonl"
        path.write_text("\n".join(lines) + "\n")
        return path

    def _scores_csv(self, tmp_path, rows):
        path = tmp_path / "scores.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["video_id", "frame", "left_box", "right_box", "score"])
            writer.writerows(rows)
        return path

    def test_known_ap_half(self, tmp_path):
        gt = self._gt_file(tmp_path)
        scores = self._scores_csv(
            tmp_path,
            [
                ["v", 0, "[100, 0, 110, 10]", "[200, 0, 210, 10]", "0.9"],  # FP above
                ["v", 0, "[0, 0, 10, 10]", "[50, 0, 60, 10]", "0.8"],
            ],
        )
        report_path = tmp_path / "report.json"
        assert run(["eval", scores, "--ground-truth", gt, "--output", report_path]) == 0
        report = json.loads(report_path.read_text())
        assert report["ap"] == pytest.approx(0.5, abs=1e-9)
        assert (tmp_path / "report.pr.csv").exists()

    def test_all_correct_ap_one(self, tmp_path):
        gt = self._gt_file(tmp_path, labels=("laeo", "laeo"))
        scores = self._scores_csv(
            tmp_path,
            [
                ["v", 0, "[0, 0, 10, 10]", "[50, 0, 60, 10]", "0.9"],
                ["v", 1, "[0, 0, 10, 10]", "[50, 0, 60, 10]", "0.7"],
            ],
        )
        report_path = tmp_path / "report.json"
        assert run(["eval", scores, "--ground-truth", gt, "--output", report_path]) == 0
        assert json.loads(report_path.read_text())["ap"] == 1.0

    def test_body_annotation_mode(self, tmp_path):
        # ground truth gives whole-person boxes; heads match by containment
        lines = [
            jl("v", 0, "body_box", id="a", box=[0, 0, 30, 90]),
            jl("v", 0, "body_box", id="b", box=[60, 0, 90, 90]),
            jl("v", 0, "pair_label", a="a", b="b", label="laeo"),
        ]
        gt = tmp_path / "gt.jsonl"
        gt.write_text("\n".join(lines) + "\n")
        scores = self._scores_csv(
            tmp_path, [["v", 0, "[10, 5, 20, 15]", "[65, 5, 75, 15]", "0.9"]]
        )
        report_path = tmp_path / "report.json"
        assert run(["eval", scores, "--ground-truth", gt, "--mode", "ioha_bodies",
                    "--output", report_path]) == 0
        assert json.loads(report_path.read_text())["ap"] == 1.0

    def test_zero_positives_reported_not_crashed(self, tmp_path):
        gt = self._gt_file(tmp_path, labels=("not_laeo",))
        scores = self._scores_csv(tmp_path, [["v", 0, "[0, 0, 10, 10]", "[50, 0, 60, 10]", "0.9"]])
        report_path = tmp_path / "report.json"
        assert run(["eval", scores, "--ground-truth", gt, "--output", report_path]) == 0
        report = json.loads(report_path.read_text())
        assert report["ap"] is None
        assert "zero_positives" in report["error"]

    def test_shot_level(self, tmp_path):
        b_left = BoundingBox(0, 0, 10, 10)
        b_right = BoundingBox(50, 0, 60, 10)
        tracks = [
            HeadTrack(0, 0, (b_left,) * 10, (0.9,) * 10, (False,) * 10),
            HeadTrack(1, 0, (b_right,) * 10, (0.9,) * 10, (False,) * 10),
        ]
        records = [track_record("v", t) for t in tracks]
        for f in range(10):
            score = 0.9 if f < 4 else 0.1
            records.append(
                AnnotationRecord(
                    "v", f, "window_score",
                    {
                        "left_track": 0, "right_track": 1, "start_frame": f, "num_frames": 1,
                        "left_box": b_left.as_list(), "right_box": b_right.as_list(),
                        "score": score,
                    },
                )
            )
        scores_path = tmp_path / "scores.jsonl"
        write_records(scores_path, records)

        gt_lines = [
            jl("v", 0, "shot_boundary"),
            jl("v", 5, "shot_boundary"),
            jl("v", 2, "head_box", id="a", box=[0, 0, 10, 10]),
            jl("v", 2, "head_box", id="b", box=[50, 0, 60, 10]),
            jl("v", 2, "pair_label", a="a", b="b", label="laeo"),
        ]
        gt = tmp_path / "gt.jsonl"
        gt.write_text("\n".join(gt_lines) + "\n")
        report_path = tmp_path / "report.json"
        assert run(["eval", scores_path, "--ground-truth", gt, "--level", "shot",
                    "--output", report_path]) == 0
        report = json.loads(report_path.read_text())
        # shot 1 (frames 0-4, smoothed max 0.9) is the positive; shot 2 scores 0.1
        assert report["ap"] == 1.0
        assert report["num_predictions"] == 2


class TestSynthCommand:
    def test_byte_identical_archives(self, tmp_path):
        a1, a2 = tmp_path / "c1.npz", tmp_path / "c2.npz"
        for out in (a1, a2):
            assert run(["synth", "--num-positive", 3, "--num-negative", 3,
                        "--output", out, "--seed", 7]) == 0
        assert a1.read_bytes() == a2.read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        a1, a2 = tmp_path / "c1.npz", tmp_path / "c2.npz"
        run(["synth", "--num-positive", 2, "--num-negative", 2, "--output", a1, "--seed", 1])
        run(["synth", "--num-positive", 2, "--num-negative", 2, "--output", a2, "--seed", 2])
        assert a1.read_bytes() != a2.read_bytes()


class TestTrainCommands:
    def test_pretrain_then_train_prints_accuracy(self, tmp_path, capsys):
        corpus = tmp_path / "corpus.npz"
        run(["synth", "--num-positive", 4, "--num-negative", 4, "--output", corpus, "--seed", 5])
        pose_ckpt = tmp_path / "pose.ckpt"
        assert run(["pretrain", "--num-samples", 4, "--epochs", 1, "--output", pose_ckpt,
                    "--seed", 5]) == 0
        assert pose_ckpt.exists()
        capsys.readouterr()
        model_ckpt = tmp_path / "model.ckpt"
        assert run(["train", "--synth", corpus, "--pretrained", pose_ckpt,
                    "--output", model_ckpt, "--seed", 5,
                    "--override", "train.epochs=2", "--override", "train.steps_per_epoch=1",
                    "--override", "train.synthetic_only_epochs=2"]) == 0
        out = capsys.readouterr().out
        assert "train_accuracy=" in out
        assert model_ckpt.exists()
        log = (tmp_path / "model.log.csv").read_text().splitlines()
        assert log[0] == "epoch,step,loss,val_AP,lr"
        assert len(log) > 2


class TestSocialCommand:
    def test_worked_ratio_edge(self, tmp_path):
        b_left = BoundingBox(0, 0, 10, 10)
        b_right = BoundingBox(50, 0, 60, 10)
        tracks = [
            HeadTrack(0, 0, (b_left,) * 10, (0.9,) * 10, (False,) * 10),
            HeadTrack(1, 0, (b_right,) * 10, (0.9,) * 10, (False,) * 10),
        ]
        records = [track_record("ep1", t) for t in tracks]
        for f in range(10):
            records.append(
                AnnotationRecord(
                    "ep1", f, "window_score",
                    {
                        "left_track": 0, "right_track": 1, "start_frame": f, "num_frames": 1,
                        "left_box": b_left.as_list(), "right_box": b_right.as_list(),
                        "score": 0.9 if f < 4 else 0.1,
                    },
                )
            )
        scores_path = tmp_path / "scores.jsonl"
        write_records(scores_path, records)
        labels = tmp_path / "labels.csv"
        labels.write_text("track_id,name\n0,ann\n1,ben\n")
        graph_path = tmp_path / "graph.json"
        plot_path = tmp_path / "graph.png"
        assert run(["social", scores_path, "--labels", labels, "--output", graph_path,
                    "--plot", plot_path]) == 0
        graph = json.loads(graph_path.read_text())
        assert graph["nodes"] == ["ann", "ben"]
        edge = graph["edges"][0]
        assert edge["ratio"] == pytest.approx(0.4)
        assert edge["weight"] == pytest.approx(0.42)
        assert edge["frames"] == 10
        assert plot_path.exists()


class TestRenderHeadmapCommand:
    def test_writes_png(self, tmp_path):
        lines = [
            jl("v", 3, "head_box", id="L", box=[20, 40, 60, 80]),
            jl("v", 3, "head_box", id="R", box=[200, 40, 240, 80]),
            jl("v", 3, "head_box", id="C", box=[110, 45, 150, 85]),
        ]
        ann = tmp_path / "ann.jsonl"
        ann.write_text("\n".join(lines) + "\n")
        out = tmp_path / "map.png"
        assert run(["render-headmap", ann, "--video", "v", "--frame", 3, "--pair", "L,R",
                    "--frame-size", "256x128", "--output", out]) == 0
        from PIL import Image

        with Image.open(out) as im:
            arr = np.asarray(im)
        assert arr.shape == (64, 64, 3)
        assert arr[:, :, 2].max() > 0  # bystander channel has mass
        assert arr[:, :, 0].max() > 200 and arr[:, :, 1].max() > 200


class TestEntryPoint:
    def test_console_script_help(self):
        import subprocess

        proc = subprocess.run(["laeo", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        for command in ("track", "score", "eval", "pretrain", "train", "synth",
                        "social", "render-headmap"):
            assert command in proc.stdout


class TestConfigPlumbing:
    def test_unknown_override_rejected(self, tmp_path, capsys):
        assert run(["synth", "--num-positive", 1, "--num-negative", 1,
                    "--output", tmp_path / "x.npz", "--override", "train.bogus=3"]) == 1
        assert "unknown" in capsys.readouterr().err

    def test_config_file_loaded(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 9, "linker": {"top_n": 2}}))
        det = tmp_path / "det.jsonl"
        det.write_text("")
        assert run(["track", det, "--output", tmp_path / "t.jsonl", "--config", cfg]) == 0
