"""End-to-end inference flows shared by the CLI and the HTTP service.

One image goes: load at the model's working resolution -> detect text ->
build the text map -> predict -> upscale the map back to the source
resolution. Scores are always computed against the full-resolution map so
box coordinates mean the same thing everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .datamodel import ImageTensor, SaliencyMap, load_image, resize_bilinear
from .errors import DataError
from .model.network import SaliencyModel, predict_saliency
from .textmap import TextDetector, TextRegionSet, build_text_map

GRID_MAX_SIDE = 128


@dataclass(frozen=True)
class AnalysisResult:
    """Everything one inference produces."""

    saliency: SaliencyMap          # at the source image's resolution
    working: SaliencyMap           # at the model's resolution
    image: ImageTensor
    text_regions: TextRegionSet


def upscale_map(working: SaliencyMap, target: tuple[int, int]) -> SaliencyMap:
    if working.data.shape == target:
        return working
    return SaliencyMap(np.clip(resize_bilinear(working.data, target), 0.0, 1.0))


def analyze_image(
    model: SaliencyModel,
    image_path: str | Path,
    text_detector: Optional[TextDetector] = None,
) -> AnalysisResult:
    """Run the full saliency flow for one image file."""
    image = load_image(image_path, target_size=model.config.resolution)
    regions = text_detector.detect(image) if text_detector is not None else TextRegionSet()
    text_map = build_text_map(image, regions)
    working = predict_saliency(model, image, text_map)
    full = upscale_map(working, image.original_size)
    return AnalysisResult(saliency=full, working=working, image=image, text_regions=regions)


def grid_shape(image_size: tuple[int, int], max_side: int = GRID_MAX_SIDE) -> tuple[int, int]:
    """Grid dimensions: cap the longer side at ``max_side``, keep aspect."""
    h, w = image_size
    if h <= 0 or w <= 0:
        raise DataError(f"degenerate image size {image_size}")
    longest = max(h, w)
    if longest <= max_side:
        return h, w
    gh = max(1, round(h * max_side / longest))
    gw = max(1, round(w * max_side / longest))
    return gh, gw


def saliency_grid(sal: SaliencyMap, max_side: int = GRID_MAX_SIDE) -> np.ndarray:
    """Coarse mass grid for client-side what-if scoring.

    The full map is normalized to unit mass and pooled by summation over
    pixel blocks (block i spans rows floor(i*H/gh) .. floor((i+1)*H/gh)),
    so each cell holds exactly the saliency mass of its block and the grid
    total stays 1 within float error.
    """
    data = sal.data.astype(np.float64)
    total = data.sum()
    if total <= 0.0:
        raise DataError("cannot build a grid from an all-zero map")
    data = data / total
    h, w = data.shape
    gh, gw = grid_shape((h, w), max_side)
    row_edges = [h * i // gh for i in range(gh)]
    col_edges = [w * j // gw for j in range(gw)]
    pooled = np.add.reduceat(np.add.reduceat(data, row_edges, axis=0), col_edges, axis=1)
    return pooled


def grid_box_score(
    grid: np.ndarray,
    image_size: tuple[int, int],
    boxes: list[tuple[int, int, int, int]],
    percent: bool = True,
) -> float:
    """Client-side scoring mirror: fraction of grid mass under the box union.

    Boxes are max-inclusive pixel rectangles in image coordinates. Cells
    partially covered contribute proportionally to the covered area, with
    overlaps resolved exactly by coordinate compression. This is the
    reference for what the browser computes from ScoreResponse data.
    """
    if not boxes:
        return 0.0
    h, w = image_size
    gh, gw = grid.shape
    # exclusive pixel-space rectangles, clipped
    rects = []
    for x0, y0, x1, y1 in boxes:
        rects.append((max(0, x0), max(0, y0), min(w, x1 + 1), min(h, y1 + 1)))
    rects = [r for r in rects if r[0] < r[2] and r[1] < r[3]]
    if not rects:
        return 0.0

    xs = sorted({v for r in rects for v in (r[0], r[2])})
    ys = sorted({v for r in rects for v in (r[1], r[3])})

    row_edges = np.array([h * i // gh for i in range(gh)] + [h], dtype=np.int64)
    col_edges = np.array([w * j // gw for j in range(gw)] + [w], dtype=np.int64)
    row_sizes = np.diff(row_edges).astype(np.float64)
    col_sizes = np.diff(col_edges).astype(np.float64)

    def overlap_1d(edges: np.ndarray, lo: int, hi: int) -> np.ndarray:
        return np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0, None).astype(np.float64)

    # elementary rectangles from the compressed coordinates are disjoint,
    # so summing their per-cell overlap areas gives the exact union area
    covered_area = np.zeros((gh, gw), dtype=np.float64)
    for yi in range(len(ys) - 1):
        for xi in range(len(xs) - 1):
            cx, cy = xs[xi], ys[yi]
            if any(r[0] <= cx < r[2] and r[1] <= cy < r[3] for r in rects):
                covered_area += np.outer(
                    overlap_1d(row_edges, ys[yi], ys[yi + 1]),
                    overlap_1d(col_edges, xs[xi], xs[xi + 1]),
                )

    cell_area = np.outer(row_sizes, col_sizes)
    fractions = np.divide(covered_area, cell_area, out=np.zeros_like(covered_area), where=cell_area > 0)
    score = float((grid.astype(np.float64) * fractions).sum())
    return score * 100.0 if percent else score
