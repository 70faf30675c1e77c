import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def write_rgb_png(path: Path, array_u8: np.ndarray) -> Path:
    """array_u8: (H, W, 3) uint8."""
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array_u8, mode="RGB").save(path, format="PNG")
    return path


def write_gray_png(path: Path, array_u8: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array_u8.astype(np.uint8), mode="L").save(path, format="PNG")
    return path


def write_boxes_json(path: Path, boxes: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"boxes": boxes}))
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)
