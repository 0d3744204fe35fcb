import numpy as np
import pytest

from laeo.core import BoundingBox


def random_box(rng: np.random.Generator, lo: float = 0.0, hi: float = 100.0) -> BoundingBox:
    x1, y1 = rng.uniform(lo, hi - 1.0, size=2)
    w, h = rng.uniform(0.5, hi - max(x1, y1), size=2)
    return BoundingBox(x1, y1, x1 + w, y1 + h)


@pytest.fixture
def rng():
    return np.random.default_rng(20240915)
