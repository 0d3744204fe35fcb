"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s to see them inline). Tolerances and runtime
budgets are pinned here and nowhere else.

The full-scale video-dataset results are not reproducible in CI; the
dataset-dependent reproduction run is documented in scripts/ instead.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from laeo.core import LABEL_LAEO
from laeo.evaluation import ranked_ap, shot_level_score, frame_level_scores
from laeo.headmap import render_head_map
from laeo.losses import laeo_loss, head_pose_loss, sign_loss, smooth_l1
from laeo.model import (
    LaeoNet,
    LaeoNetConfig,
    crops_to_tensor,
    map_to_tensor,
    snapshot_parameters,
)
from laeo.pipeline import (
    SamplePool,
    TrainConfig,
    filter_hard_negatives,
    pretrain_head_pose,
    train_laeo,
)
from laeo.synthgen import generate_pose_dataset, make_corpus
from laeo.tracker import LinkerConfig, link_bidirectional, link_tracks

from conftest import random_box
from test_evaluation import sweep_ap
from test_tracker import oracle_link, random_instance


@contextmanager
def criterion(num: int, name: str):
    started = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] criterion {num} ({name}): FAIL "
              f"after {time.monotonic() - started:.1f}s")
        raise
    print(f"\n[ACCEPTANCE] criterion {num} ({name}): PASS "
          f"in {time.monotonic() - started:.1f}s")


def test_criterion_1_architecture_contract():
    with criterion(1, "architecture contract"):
        start = time.monotonic()
        config = LaeoNetConfig()
        assert config.head_pose_embedding_dim == 1080
        assert config.head_map_embedding_dim == 64
        torch.manual_seed(0)
        model = LaeoNet(config)
        # hand-computed: conv stages + fusion block, geometry branch off
        head_pose = 3616 + 10392 + 20768 + 13836          # = 48612
        head_map = 608 + 1168 + 3480 + 3472               # = 8728
        fusion = (2224 * 128 + 128) + (128 * 2 + 2)       # = 285058
        assert model.num_parameters() == head_pose + head_map + fusion == 342398
        # embeddings really have those dims at runtime
        model.eval()
        assert model.embed_head_sequence(torch.randn(1, 3, 10, 64, 64)).shape == (1, 1080)
        assert model.embed_head_map(torch.rand(1, 3, 64, 64)).shape == (1, 64)
        assert time.monotonic() - start < 1.0


def test_criterion_2_loss_correctness():
    with criterion(2, "loss correctness"):
        assert float(laeo_loss(1, 0.5)) == pytest.approx(math.log(2), abs=1e-9)
        assert float(laeo_loss(0, 0.5)) == pytest.approx(math.log(2), abs=1e-9)
        assert float(smooth_l1(0.5)) == 0.125
        assert float(smooth_l1(2.0)) == 1.5
        # sign-loss truth table
        assert float(sign_loss(0.5, 0.3)) == 0.0
        assert float(sign_loss(0.5, -0.3)) == 1.0
        assert float(sign_loss(-0.5, 0.3)) == 1.0
        assert float(sign_loss(0.0, -0.7)) == 0.0
        assert float(sign_loss(0.4, 0.0)) == 0.0
        # worked head-pose examples
        assert float(head_pose_loss([0.5, 0.0, 0.0], [0.0, 0.0, 0.0])) == pytest.approx(
            0.075, abs=1e-9
        )
        assert float(head_pose_loss([-0.5, 0.2, -0.1], [0.5, 0.2, -0.1])) == pytest.approx(
            0.4, abs=1e-9
        )


def _relative_error(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    if scale < 1e-10:
        return 0.0
    return abs(a - b) / scale


def test_criterion_3_gradient_checks():
    with criterion(3, "gradient checks"):
        start = time.monotonic()
        rng = np.random.default_rng(33)

        # scalar losses: autograd vs central differences
        for _ in range(25):
            p = float(rng.uniform(0.05, 0.95))
            c = int(rng.integers(0, 2))
            x = torch.tensor(p, dtype=torch.float64, requires_grad=True)
            laeo_loss(c, x).backward()
            h = 1e-7
            numeric = float(
                (laeo_loss(c, torch.tensor(p + h, dtype=torch.float64))
                 - laeo_loss(c, torch.tensor(p - h, dtype=torch.float64))) / (2 * h)
            )
            assert _relative_error(float(x.grad), numeric) < 1e-4

        checked = 0
        while checked < 25:
            v = float(rng.uniform(-3, 3))
            if abs(abs(v) - 1.0) <= 1e-2:
                continue
            checked += 1
            x = torch.tensor(v, dtype=torch.float64, requires_grad=True)
            smooth_l1(x).backward()
            h = 1e-7
            numeric = float(
                (smooth_l1(torch.tensor(v + h, dtype=torch.float64))
                 - smooth_l1(torch.tensor(v - h, dtype=torch.float64))) / (2 * h)
            )
            assert _relative_error(float(x.grad), numeric) < 1e-4

        # full network loss w.r.t. a random 200-parameter subset, float64
        torch.manual_seed(44)
        model = LaeoNet(LaeoNetConfig(), dtype=torch.float64)
        model.eval()  # dropout off: the loss must be deterministic
        left = crops_to_tensor(rng.uniform(-1, 1, size=(1, 10, 64, 64, 3)), torch.float64)
        right = crops_to_tensor(rng.uniform(-1, 1, size=(1, 10, 64, 64, 3)), torch.float64)
        head_map = map_to_tensor(rng.uniform(0, 1, size=(1, 64, 64, 3)), torch.float64)

        def loss_value() -> torch.Tensor:
            return laeo_loss(1, model(left, right, head_map)[0, 1])

        loss = loss_value()
        params = [p for p in model.parameters()]
        grads = torch.autograd.grad(loss, params)
        sizes = [p.numel() for p in params]
        total = sum(sizes)
        picks = rng.choice(total, size=200, replace=False)

        bounds = np.cumsum([0] + sizes)
        h = 1e-6
        for flat_index in picks:
            pi = int(np.searchsorted(bounds, flat_index, side="right") - 1)
            offset = int(flat_index - bounds[pi])
            with torch.no_grad():
                flat = params[pi].view(-1)
                original = float(flat[offset])
                flat[offset] = original + h
                up = float(loss_value())
                flat[offset] = original - h
                down = float(loss_value())
                flat[offset] = original
            numeric = (up - down) / (2 * h)
            analytic = float(grads[pi].view(-1)[offset])
            assert _relative_error(analytic, numeric) < 1e-4, (
                f"param tensor {pi} offset {offset}: autograd {analytic} vs fd {numeric}"
            )

        elapsed = time.monotonic() - start
        assert elapsed < 120.0, f"gradient checks took {elapsed:.1f}s"


def test_criterion_4_overfit_smoke():
    with criterion(4, "overfit smoke test"):
        start = time.monotonic()
        corpus = make_corpus(16, 16, seed=2024)
        pose_data = generate_pose_dataset(16, seed=2024)
        pretrained, _ = pretrain_head_pose(
            pose_data, TrainConfig(lr_init=1e-3, seed=1), LaeoNetConfig(), steps=60
        )
        frozen_before = {
            f"head_pose.{k}": v.detach().numpy().copy()
            for k, v in pretrained.head_pose.state_dict().items()
        }
        # On a 32-sample memorization run the monitored AP saturates at 1.0
        # almost immediately, so the plateau schedule would decay the rate to
        # its floor before the last samples flip; a flat 5e-4 fits the job.
        config = TrainConfig(
            epochs=200, seed=1, target_train_accuracy=0.95, lr_init=5e-4, lr_patience=50
        )
        result = train_laeo(None, corpus, config, LaeoNetConfig(), pretrained=pretrained)
        elapsed = time.monotonic() - start

        assert result.final_train_accuracy is not None
        assert result.final_train_accuracy >= 0.95, (
            f"train accuracy {result.final_train_accuracy:.3f} below 0.95"
        )
        epochs_used = max(row.epoch for row in result.log) + 1
        assert epochs_used <= 200
        frozen_after = snapshot_parameters(result.model, ["head_pose"])
        for name, value in frozen_before.items():
            np.testing.assert_array_equal(frozen_after[name], value)
        assert elapsed < 600.0, f"overfit run took {elapsed:.1f}s"
        print(f"  reached {result.final_train_accuracy:.3f} accuracy "
              f"in {epochs_used} epochs, {elapsed:.1f}s")


def test_criterion_5_tracker_oracle():
    with criterion(5, "tracker oracle"):
        rng = np.random.default_rng(55)
        config = LinkerConfig(overlap_threshold=0.3, max_gap=2)
        for _ in range(500):
            dets = random_instance(rng)
            got = link_tracks(dets, config)
            assert got == oracle_link(dets, config)

            merged = link_bidirectional(dets, config)
            for t in merged:
                n = len(t.boxes)
                assert n == len(t.per_frame_scores) == len(t.interpolated_mask) >= 1
                assert t.end_frame - t.start_frame + 1 == n
            # no detection claimed twice within a directional pass
            seen = set()
            for t in got:
                for offset, interp in enumerate(t.interpolated_mask):
                    if not interp:
                        key = (t.start_frame + offset, t.boxes[offset])
                        assert key not in seen
                        seen.add(key)


def test_criterion_6_ap_oracle():
    with criterion(6, "average-precision oracle"):
        rng = np.random.default_rng(66)
        for _ in range(1000):
            n = int(rng.integers(1, 21))
            if rng.uniform() < 0.5:
                scores = [float(np.round(rng.uniform(0, 1), 1)) for _ in range(n)]
            else:
                scores = [float(rng.uniform(0, 1)) for _ in range(n)]
            num_positives = int(rng.integers(1, 11))
            correct_count = int(rng.integers(0, min(n, num_positives) + 1))
            correct = [True] * correct_count + [False] * (n - correct_count)
            rng.shuffle(correct)

            got = ranked_ap(scores, correct, num_positives).ap
            assert abs(got - sweep_ap(scores, correct, num_positives)) < 1e-9

            transformed = [math.exp(2.0 * s) for s in scores]  # strictly monotone
            assert ranked_ap(transformed, correct, num_positives).ap == got


def test_criterion_7_headmap_invariants():
    with criterion(7, "head-map invariants"):
        rng = np.random.default_rng(77)
        frame = (512.0, 384.0)
        for _ in range(100):
            n = int(rng.integers(2, 6))
            heads = [random_box(rng, 0, 300) for _ in range(n)]
            li, ri = (int(i) for i in rng.choice(n, size=2, replace=False))
            base = render_head_map(heads, li, ri, frame)
            # determinism: bit-identical re-render
            assert np.array_equal(base, render_head_map(heads, li, ri, frame))
            # value range
            assert base.min() >= 0.0 and base.max() <= 1.0
            # channel-swap symmetry
            swapped = render_head_map(heads, ri, li, frame)
            assert np.array_equal(swapped[:, :, 0], base[:, :, 1])
            assert np.array_equal(swapped[:, :, 1], base[:, :, 0])
            assert np.array_equal(swapped[:, :, 2], base[:, :, 2])
            # translation invariance (up to float rounding of shifted coords)
            dx, dy = (float(v) for v in rng.uniform(-150, 150, size=2))
            moved = [h.translated(dx, dy) for h in heads]
            shifted = render_head_map(moved, li, ri, frame, frame_origin=(dx, dy))
            np.testing.assert_allclose(shifted, base, atol=1e-12)


def test_criterion_8_scoring_methodology():
    with criterion(8, "scoring methodology"):
        spike = [0.0] * 4 + [1.0] + [0.0] * 4
        assert shot_level_score({(0, 1): spike}) == pytest.approx(0.2, abs=1e-9)

        from laeo.core import BoundingBox, HeadTrack
        from laeo.tracker import PairWindow

        box_l = BoundingBox(0, 0, 10, 10)
        box_r = BoundingBox(50, 0, 60, 10)
        tracks = [
            HeadTrack(0, 0, (box_l,) * 10, (0.9,) * 10, (False,) * 10),
            HeadTrack(1, 0, (box_r,) * 10, (0.9,) * 10, (False,) * 10),
        ]
        window = PairWindow(0, 1, 0, (box_l,) * 10, (box_r,) * 10)
        frames = frame_level_scores([(window, 0.8)], tracks)
        assert {f.frame_index for f in frames} == set(range(10))  # all K frames
        assert all(f.score == 0.8 for f in frames)


def test_criterion_9_curriculum_and_batch_contracts():
    with criterion(9, "curriculum and batch contracts"):
        corpus = make_corpus(5, 6, seed=99)
        pose_data = generate_pose_dataset(2, seed=99)
        pretrained, _ = pretrain_head_pose(
            pose_data, TrainConfig(lr_init=1e-3, seed=3), LaeoNetConfig(), steps=2
        )
        config = TrainConfig(epochs=4, steps_per_epoch=2, seed=3, synthetic_only_epochs=2)
        result = train_laeo(corpus, corpus, config, LaeoNetConfig(), pretrained=pretrained)
        assert len(result.audits) == 8
        for audit in result.audits:
            # every batch is 4 positive + 4 negative + 1 hard negative
            assert audit.num_positives == 4
            assert audit.num_negatives == 4
            assert audit.num_hard == 1
            assert sorted(audit.labels) == [0] * 5 + [1] * 4
            if audit.epoch < 2:
                assert audit.phase == "synthetic_only"
            else:
                assert audit.phase == ("real" if audit.step % 2 == 1 else "synthetic")

        rng = np.random.default_rng(9)
        for _ in range(100):
            scored = [(i, float(rng.uniform())) for i in range(40)]
            lo, hi = sorted(rng.uniform(0, 1, size=2))
            assert set(filter_hard_negatives(scored, lo)) <= set(filter_hard_negatives(scored, hi))


def test_pools_and_monitor_sanity():
    # guard for the fixtures the criteria above rely on
    corpus = make_corpus(16, 16, seed=2024)
    pool = SamplePool.from_samples(corpus)
    assert len(pool.positives) == 16 and len(pool.negatives) == 16
    labels = np.array([s.label for s in corpus])
    assert (labels == LABEL_LAEO).sum() == 16
