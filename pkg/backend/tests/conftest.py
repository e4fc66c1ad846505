"""
Shared fixtures: seeded generators, textured frames and short synthetic sequences
"""
import numpy as np
import pytest

from app.services.imaging import Frame
from app.services.synthetic import MotionSpec, SyntheticSpec, smooth_texture


@pytest.fixture
def rng():
    """Seeded generator so random problems are reproducible"""
    return np.random.default_rng(1234)


@pytest.fixture
def textured_frame():
    """160x120 smooth grayscale texture"""
    pixels = smooth_texture(np.random.default_rng(7), (120, 160), 2.0, 0.0, 255.0)
    return Frame(np.rint(pixels).astype(np.uint8))


@pytest.fixture
def short_spec():
    """A 12-frame translating square, small enough for unit tests"""
    return SyntheticSpec(
        name="short",
        frames=12,
        width=220,
        height=160,
        start=(40.0, 56.0),
        size=(40, 40),
        motion=MotionSpec(kind="linear", velocity=(3.0, 0.0)),
        seed=3,
    )
