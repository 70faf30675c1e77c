"""Grid pooling and the end-to-end inference flow."""
from __future__ import annotations

import numpy as np
import pytest
import torch
from conftest import write_rgb_png

from brandvis.datamodel import BoundingBox, BoundingBoxSet, SaliencyMap
from brandvis.errors import DataError
from brandvis.model.network import ModelConfig, SaliencyModel
from brandvis.pipeline import (
    GRID_MAX_SIDE,
    analyze_image,
    grid_box_score,
    grid_shape,
    saliency_grid,
    upscale_map,
)
from brandvis.scoring import brand_attention_score
from brandvis.textmap import StubTextDetector


# --- grid_shape -------------------------------------------------------------


def test_small_image_grid_is_native():
    assert grid_shape((96, 128)) == (96, 128)
    assert grid_shape((128, 128)) == (128, 128)


def test_large_image_grid_caps_longest_side():
    gh, gw = grid_shape((960, 1280))
    assert max(gh, gw) == GRID_MAX_SIDE
    assert (gh, gw) == (96, 128)


def test_grid_keeps_aspect_for_extreme_ratios():
    gh, gw = grid_shape((50, 400))
    assert gw == 128
    assert gh == max(1, round(50 * 128 / 400))


def test_degenerate_size_rejected():
    with pytest.raises(DataError):
        grid_shape((0, 128))


# --- saliency_grid ----------------------------------------------------------


def test_grid_total_mass_is_one():
    rng = np.random.default_rng(0)
    sal = SaliencyMap(rng.uniform(0.0, 1.0, (200, 300)))
    grid = saliency_grid(sal)
    assert grid.shape == (85, 128)
    assert grid.sum() == pytest.approx(1.0, abs=1e-12)
    assert (grid >= 0).all()


def test_grid_cells_hold_block_mass_exactly():
    rng = np.random.default_rng(1)
    data = rng.uniform(0.0, 1.0, (256, 512))
    grid = saliency_grid(SaliencyMap(data))
    gh, gw = grid.shape
    norm = data.astype(np.float64) / data.sum()
    h, w = data.shape
    # spot-check a handful of cells against explicit block sums
    for gy, gx in [(0, 0), (gh - 1, gw - 1), (gh // 2, gw // 3)]:
        y0, y1 = h * gy // gh, h * (gy + 1) // gh
        x0, x1 = w * gx // gw, w * (gx + 1) // gw
        assert grid[gy, gx] == pytest.approx(norm[y0:y1, x0:x1].sum(), rel=1e-12)


def test_grid_of_zero_map_rejected():
    with pytest.raises(DataError, match="all-zero"):
        saliency_grid(SaliencyMap(np.zeros((10, 10))))


def test_point_mass_lands_in_one_cell():
    data = np.zeros((256, 256))
    data[40, 200] = 1.0
    grid = saliency_grid(SaliencyMap(data))
    assert grid.shape == (128, 128)
    assert grid.sum() == pytest.approx(1.0)
    assert grid[20, 100] == pytest.approx(1.0)


# --- grid_box_score ---------------------------------------------------------


def test_grid_score_full_frame_is_100():
    rng = np.random.default_rng(2)
    sal = SaliencyMap(rng.uniform(0.0, 1.0, (200, 300)))
    grid = saliency_grid(sal)
    assert grid_box_score(grid, (200, 300), [(0, 0, 299, 199)]) == pytest.approx(100.0, abs=1e-9)


def test_grid_score_empty_boxes_is_zero():
    grid = np.full((4, 4), 1 / 16)
    assert grid_box_score(grid, (16, 16), []) == 0.0


def test_grid_score_fractional_cell_coverage():
    # 2x2 grid over a 4x4 image, equal mass everywhere: one pixel column
    # covers half of the two left cells
    grid = np.full((2, 2), 0.25)
    assert grid_box_score(grid, (4, 4), [(0, 0, 1, 3)]) == pytest.approx(50.0)
    assert grid_box_score(grid, (4, 4), [(0, 0, 0, 3)]) == pytest.approx(25.0)


def test_grid_score_union_does_not_double_count():
    grid = np.full((2, 2), 0.25)
    once = grid_box_score(grid, (4, 4), [(0, 0, 3, 3)])
    twice = grid_box_score(grid, (4, 4), [(0, 0, 3, 3), (1, 1, 2, 2)])
    assert once == pytest.approx(twice)


def test_grid_score_matches_exact_score_at_native_resolution():
    # when the grid is the (normalized) map itself, the grid score must agree
    # with the real scorer to float precision
    rng = np.random.default_rng(3)
    data = rng.uniform(0.0, 1.0, (96, 128))
    sal = SaliencyMap(data)
    grid = saliency_grid(sal)
    for seed in range(20):
        r = np.random.default_rng(seed)
        x0, y0 = int(r.integers(0, 100)), int(r.integers(0, 70))
        x1, y1 = int(r.integers(x0, 128)), int(r.integers(y0, 96))
        approx = grid_box_score(grid, (96, 128), [(x0, y0, x1, y1)])
        exact = brand_attention_score(sal, BoundingBoxSet((BoundingBox(x0, y0, x1, y1),)))
        assert abs(approx - exact) < 1e-9


def test_grid_score_close_to_exact_after_pooling():
    rng = np.random.default_rng(4)
    data = rng.uniform(0.0, 1.0, (300, 400))
    sal = SaliencyMap(data)
    grid = saliency_grid(sal)
    for seed in range(20):
        r = np.random.default_rng(100 + seed)
        x0, y0 = int(r.integers(0, 300)), int(r.integers(0, 200))
        x1, y1 = int(r.integers(x0, 400)), int(r.integers(y0, 300))
        approx = grid_box_score(grid, (300, 400), [(x0, y0, x1, y1)])
        exact = brand_attention_score(sal, BoundingBoxSet((BoundingBox(x0, y0, x1, y1),)))
        assert abs(approx - exact) <= 0.5


def test_grid_score_clipped_boxes():
    grid = np.full((2, 2), 0.25)
    # grid_box_score is the client mirror: it clips rather than validates
    assert grid_box_score(grid, (4, 4), [(2, 2, 10, 10)]) == pytest.approx(25.0)


# --- analyze_image ----------------------------------------------------------


@pytest.fixture(scope="module")
def small_model():
    torch.manual_seed(0)
    m = SaliencyModel(ModelConfig(resolution=(64, 64)))
    m.eval()
    return m


def _rand_rgb(height: int, width: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)


def test_analyze_image_resolutions(small_model, tmp_path):
    path = write_rgb_png(tmp_path / "img.png", _rand_rgb(96, 128, seed=0))
    result = analyze_image(small_model, path)
    assert result.saliency.data.shape == (96, 128)
    assert result.working.data.shape == (64, 64)
    assert result.image.original_size == (96, 128)
    assert len(result.text_regions) == 0


def test_analyze_image_deterministic(small_model, tmp_path):
    path = write_rgb_png(tmp_path / "img.png", _rand_rgb(64, 64, seed=1))
    a = analyze_image(small_model, path)
    b = analyze_image(small_model, path)
    assert np.array_equal(a.saliency.data, b.saliency.data)


def test_analyze_image_carries_text_regions(small_model, tmp_path):
    path = write_rgb_png(tmp_path / "img.png", _rand_rgb(64, 64, seed=2))
    detector = StubTextDetector((BoundingBox(4, 4, 20, 12),))
    result = analyze_image(small_model, path, detector)
    assert len(result.text_regions) == 1


def test_upscale_same_shape_is_identity():
    sal = SaliencyMap(np.full((8, 8), 0.5))
    assert upscale_map(sal, (8, 8)) is sal
