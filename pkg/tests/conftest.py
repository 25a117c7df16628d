"""Shared fixtures: cached synthetic scenes and depth-field builders."""

from __future__ import annotations

import numpy as np
import pytest

from threadrecon.pipeline import PipelineConfig
from threadrecon.stereo import DepthField
from threadrecon.synthetic import SyntheticScene, generate_scene


@pytest.fixture(scope="session")
def default_config() -> PipelineConfig:
    return PipelineConfig.default()


@pytest.fixture(scope="session")
def scene_cache(default_config):
    """Lazily generated default scenes, shared across the whole session."""
    cache: dict[int, SyntheticScene] = {}

    def get(seed: int) -> SyntheticScene:
        if seed not in cache:
            cache[seed] = generate_scene(seed, default_config.generation)
        return cache[seed]

    return get


def make_field(
    mask: np.ndarray,
    depth: np.ndarray,
    reliability: np.ndarray,
    valid: np.ndarray | None = None,
) -> DepthField:
    """Hand-built depth field for keypoint/corridor tests."""
    if valid is None:
        valid = mask.copy()
    shape = mask.shape
    return DepthField(
        mask=mask.copy(),
        disparity=np.where(mask, 40, 0).astype(np.int32),
        disparity_next=np.where(mask, 50, 0).astype(np.int32),
        e_min=np.where(mask, 10.0, 0.0),
        e_next=np.where(mask, 1e6, 0.0),
        depth=np.where(mask, depth, np.nan),
        reliability=np.where(mask, reliability, 0.0),
        valid=valid & mask,
    )


def straight_thread_field(
    width: int = 640,
    height: int = 480,
    x_range: tuple[int, int] = (20, 620),
    y_center: int = 240,
    thickness: int = 3,
    depth_fn=None,
) -> tuple[DepthField, np.ndarray]:
    """A rasterized horizontal thread with reliable pixels everywhere.

    Returns the field and the mask. ``depth_fn(x)`` gives per-column depth
    (default: gentle linear ramp).
    """
    if depth_fn is None:
        depth_fn = lambda x: 100.0 + 0.02 * (x - x_range[0])  # noqa: E731
    mask = np.zeros((height, width), bool)
    depth = np.zeros((height, width))
    half = thickness // 2
    for x in range(*x_range):
        mask[y_center - half : y_center + half + 1, x] = True
        depth[y_center - half : y_center + half + 1, x] = depth_fn(x)
    rel = np.where(mask, 0.99, 0.0)
    return make_field(mask, depth, rel), mask
