import numpy as np
import pytest

from laeo.core import BoundingBox
from laeo.headmap import HeadMapSpec, geometry_tuple, render_head_map
from conftest import random_box

FRAME = (640.0, 480.0)


def centered_box(cx, cy, side):
    return BoundingBox(cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2)


class TestRenderHeadMap:
    def test_bystander_channel_empty_without_bystanders(self):
        heads = [centered_box(160, 240, 50), centered_box(480, 240, 50)]
        out = render_head_map(heads, 0, 1, FRAME)
        assert out.shape == (64, 64, 3)
        np.testing.assert_array_equal(out[:, :, 2], 0.0)
        assert out[:, :, 0].max() > 0.9
        assert out[:, :, 1].max() > 0.9

    def test_centered_head_peaks_at_map_center_with_value_one(self):
        frame = (640.0, 640.0)
        heads = [centered_box(320, 320, 40), centered_box(600, 320, 40)]
        out = render_head_map(heads, 0, 1, frame)
        assert out[32, 32, 0] == 1.0
        assert out[:, :, 0].max() == 1.0
        y, x = np.unravel_index(np.argmax(out[:, :, 0]), (64, 64))
        assert (y, x) == (32, 32)

    def test_middle_bystander_lands_between_targets(self):
        left = centered_box(128, 240, 60)
        right = centered_box(512, 240, 60)
        middle = centered_box(320, 240, 80)
        out = render_head_map([left, right, middle], 0, 1, FRAME)
        x_left = np.unravel_index(np.argmax(out[:, :, 0]), (64, 64))[1]
        x_right = np.unravel_index(np.argmax(out[:, :, 1]), (64, 64))[1]
        x_mid = np.unravel_index(np.argmax(out[:, :, 2]), (64, 64))[1]
        assert x_left < x_mid < x_right

    def test_index_validation(self):
        heads = [centered_box(100, 100, 30), centered_box(300, 100, 30)]
        with pytest.raises(IndexError):
            render_head_map(heads, 0, 5, FRAME)
        with pytest.raises(ValueError):
            render_head_map(heads, 1, 1, FRAME)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            HeadMapSpec(map_size=32)
        with pytest.raises(ValueError):
            HeadMapSpec(sigma_factor=0.0)


def _random_scene(rng, n_heads):
    heads = [random_box(rng, 0, 400) for _ in range(n_heads)]
    li, ri = rng.choice(n_heads, size=2, replace=False)
    return heads, int(li), int(ri)


class TestMapInvariants:
    def test_deterministic_range_swap_translation(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 6))
            heads, li, ri = _random_scene(rng, n)
            frame = (500.0, 450.0)
            a = render_head_map(heads, li, ri, frame)
            b = render_head_map(heads, li, ri, frame)
            np.testing.assert_array_equal(a, b)  # bit-identical re-render

            assert a.min() >= 0.0 and a.max() <= 1.0

            swapped = render_head_map(heads, ri, li, frame)
            np.testing.assert_array_equal(swapped[:, :, 0], a[:, :, 1])
            np.testing.assert_array_equal(swapped[:, :, 1], a[:, :, 0])
            np.testing.assert_array_equal(swapped[:, :, 2], a[:, :, 2])

            dx, dy = rng.uniform(-200, 200, size=2)
            moved = [h.translated(dx, dy) for h in heads]
            shifted = render_head_map(moved, li, ri, frame, frame_origin=(dx, dy))
            # Mathematically identical; (c + d) - d costs a few float ulps.
            np.testing.assert_allclose(shifted, a, atol=1e-12)


class TestGeometryTuple:
    def test_identical_boxes(self):
        b = centered_box(100, 100, 40)
        g = geometry_tuple(b, b, FRAME)
        assert (g.dx, g.dy, g.scale_ratio) == (0.0, 0.0, 1.0)

    def test_horizontal_displacement(self):
        left = centered_box(0.25 * FRAME[0], 0.5 * FRAME[1], 40)
        right = centered_box(0.75 * FRAME[0], 0.5 * FRAME[1], 40)
        g = geometry_tuple(left, right, FRAME)
        assert g.dx == pytest.approx(0.5, abs=1e-12)
        assert g.dy == pytest.approx(0.0, abs=1e-12)
        assert g.scale_ratio == pytest.approx(1.0, abs=1e-12)

    def test_scale_ratio(self):
        left = centered_box(100, 100, 80)
        right = centered_box(300, 100, 40)
        assert geometry_tuple(left, right, FRAME).scale_ratio == pytest.approx(2.0)
