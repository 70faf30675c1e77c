"""Regenerate the studio's parity fixtures from the reference scorer.

Writes two files into frontend/test/fixtures/:

  parity.json      a structured synthetic saliency map pooled to the
                   service grid, 50 random box sets, and the exact
                   full-map score for each set
  cli_parity.json  a seeded-model analysis of a rendered test image, the
                   service grid for it, one box layout, and the decimal
                   the command-line scorer printed for that layout

Run from the repository root with the package installed:

    python3 frontend/scripts/make_fixtures.py
"""
from __future__ import annotations

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from brandvis.datamodel import BoundingBox, BoundingBoxSet, SaliencyMap
from brandvis.model.network import ModelConfig, SaliencyModel, save_checkpoint
from brandvis.pipeline import GRID_MAX_SIDE, analyze_image, saliency_grid
from brandvis.scoring import ScoreConfig, brand_attention_score

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "test" / "fixtures"
HEIGHT, WIDTH = 192, 256

BLOBS = [
    # (row, col, sigma, amplitude)
    (86.0, 128.0, 18.0, 1.0),
    (58.0, 56.0, 14.0, 0.7),
    (134.0, 205.0, 22.0, 0.8),
    (29.0, 192.0, 10.0, 0.5),
]


def blob_field(height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    field = np.full((height, width), 0.02)
    for cy, cx, sigma, amp in BLOBS:
        field += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
    return field / field.max()


def service_grid(sal: SaliencyMap) -> list[list[float]]:
    grid = saliency_grid(sal, GRID_MAX_SIDE)
    grid = grid / max(1.0, float(grid.sum()))
    return [[float(f"{v:.12g}") for v in row] for row in grid]


def random_box(rng: np.random.Generator, height: int, width: int) -> dict:
    bw = int(rng.integers(4, width // 2))
    bh = int(rng.integers(4, height // 2))
    x0 = int(rng.integers(0, width - bw))
    y0 = int(rng.integers(0, height - bh))
    return {"x_min": x0, "y_min": y0, "x_max": x0 + bw - 1, "y_max": y0 + bh - 1}


def score(sal: SaliencyMap, boxes: list[dict]) -> float:
    box_set = BoundingBoxSet(tuple(BoundingBox(**b) for b in boxes))
    return brand_attention_score(sal, box_set, ScoreConfig())


def make_parity() -> None:
    sal = SaliencyMap(blob_field(HEIGHT, WIDTH))
    rng = np.random.default_rng(20250801)
    cases = []
    for _ in range(50):
        boxes = [random_box(rng, HEIGHT, WIDTH) for _ in range(int(rng.integers(1, 5)))]
        cases.append({"boxes": boxes, "server_score": score(sal, boxes)})
    out = {
        "width": WIDTH,
        "height": HEIGHT,
        "grid": service_grid(sal),
        "cases": cases,
    }
    (FIXTURE_DIR / "parity.json").write_text(json.dumps(out) + "\n")
    print(f"parity.json: {len(cases)} cases, grid {len(out['grid'])}x{len(out['grid'][0])}")


def render_test_image(path: Path) -> None:
    base = blob_field(HEIGHT, WIDTH)
    rng = np.random.default_rng(7)
    rgb = np.stack(
        [
            base,
            np.roll(base, 12, axis=1),
            np.linspace(0.1, 0.9, WIDTH)[None, :].repeat(HEIGHT, axis=0),
        ],
        axis=-1,
    )
    rgb = np.clip(rgb + rng.normal(0.0, 0.03, rgb.shape), 0.0, 1.0)
    Image.fromarray((rgb * 255).round().astype(np.uint8)).save(path)


def make_cli_parity() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        tmpdir = Path(tmp)
        image_path = tmpdir / "scene.png"
        render_test_image(image_path)

        torch.manual_seed(0)
        model = SaliencyModel(ModelConfig(resolution=(64, 64))).eval()
        ckpt = tmpdir / "model.pt"
        save_checkpoint(model, ckpt)

        result = analyze_image(model, image_path)
        boxes = [
            {"x_min": 96, "y_min": 56, "x_max": 175, "y_max": 127, "label": "logo"},
            {"x_min": 20, "y_min": 140, "x_max": 79, "y_max": 185},
        ]
        server_score = score(result.saliency, boxes)

        boxes_path = tmpdir / "boxes.json"
        boxes_path.write_text(json.dumps({"boxes": boxes}))
        proc = subprocess.run(
            [
                "brandvis",
                "score",
                str(image_path),
                "--boxes",
                str(boxes_path),
                "--checkpoint",
                str(ckpt),
            ],
            capture_output=True,
            text=True,
            check=True,
        )
        cli_stdout = proc.stdout.strip()
        if abs(float(cli_stdout) - server_score) > 1e-9:
            raise AssertionError(
                f"CLI printed {cli_stdout} but the library scored {server_score!r}"
            )

        out = {
            "width": WIDTH,
            "height": HEIGHT,
            "grid": service_grid(result.saliency),
            "boxes": {"boxes": boxes},
            "server_score": server_score,
            "cli_stdout": cli_stdout,
        }
        (FIXTURE_DIR / "cli_parity.json").write_text(json.dumps(out) + "\n")
        print(f"cli_parity.json: cli printed {cli_stdout}")


def main() -> int:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    make_parity()
    make_cli_parity()
    return 0


if __name__ == "__main__":
    sys.exit(main())
