"""Core domain types and file I/O.

Conventions used throughout the package:

* arrays are numpy, row-major ``(row, col[, channel])``; ``x`` is the column
  axis, ``y`` the row axis, origin top-left
* bounding boxes are max-inclusive pixel coordinates
* images and density maps are resized bilinearly; fixation maps are never
  resized
* saliency maps persist as 16-bit grayscale PNG
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import DataError

DEFAULT_RESOLUTION = (288, 384)  # (height, width), both divisible by 32


@dataclass(frozen=True)
class ImageTensor:
    """RGB image normalized to [0, 1], shape (H, W, 3) float32.

    ``original_size`` keeps the pre-resize (height, width) so saliency maps
    can be upscaled back to the source resolution.
    """

    data: np.ndarray
    original_size: tuple[int, int]
    source_path: Optional[Path] = None

    def __post_init__(self) -> None:
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise DataError(f"image tensor must be (H, W, 3), got {self.data.shape}")
        if self.data.size == 0:
            raise DataError("zero-dimension image")
        if float(self.data.min()) < 0.0 or float(self.data.max()) > 1.0:
            raise DataError("image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class SaliencyMap:
    """Predicted saliency, shape (H, W), every value in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.ndim != 2:
            raise DataError(f"saliency map must be 2-D, got shape {self.data.shape}")
        if float(self.data.min()) < 0.0 or float(self.data.max()) > 1.0:
            raise DataError("saliency values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class DensityMap:
    """Ground-truth attention density, shape (H, W), nonnegative, not all zero."""

    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.ndim != 2:
            raise DataError(f"density map must be 2-D, got shape {self.data.shape}")
        if float(self.data.min()) < 0.0:
            raise DataError("density map must be nonnegative")
        if float(self.data.sum()) == 0.0:
            raise DataError("degenerate density: all zeros")


@dataclass(frozen=True)
class FixationMap:
    """Binary eye-fixation map, shape (H, W), values in {0, 1}."""

    data: np.ndarray

    def __post_init__(self) -> None:
        if self.data.ndim != 2:
            raise DataError(f"fixation map must be 2-D, got shape {self.data.shape}")
        values = np.unique(self.data)
        if not np.all(np.isin(values, (0, 1))):
            raise DataError("fixation map is not binary")
        if not np.any(self.data):
            raise DataError("all-zero fixation map: fixation metrics undefined")

    @property
    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, max-inclusive pixel coordinates (x = column, y = row)."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    label: Optional[str] = None
    confidence: Optional[float] = None

    def __post_init__(self) -> None:
        if self.x_min > self.x_max:
            raise DataError(f"inverted box: x_min {self.x_min} > x_max {self.x_max}")
        if self.y_min > self.y_max:
            raise DataError(f"inverted box: y_min {self.y_min} > y_max {self.y_max}")
        if self.x_min < 0 or self.y_min < 0:
            raise DataError("box coordinates must be nonnegative")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence} outside [0, 1]")

    def validate_against(self, height: int, width: int) -> None:
        if self.x_max >= width or self.y_max >= height:
            raise DataError(
                f"box ({self.x_min},{self.y_min},{self.x_max},{self.y_max}) "
                f"outside image bounds {width}x{height}"
            )

    def to_dict(self) -> dict:
        d: dict = {
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
        }
        if self.label is not None:
            d["label"] = self.label
        if self.confidence is not None:
            d["confidence"] = self.confidence
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox":
        try:
            return cls(
                x_min=int(d["x_min"]),
                y_min=int(d["y_min"]),
                x_max=int(d["x_max"]),
                y_max=int(d["y_max"]),
                label=d.get("label"),
                confidence=None if d.get("confidence") is None else float(d["confidence"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed box entry {d!r}: {exc}") from exc


@dataclass(frozen=True)
class BoundingBoxSet:
    """Ordered list of boxes; empty is legal and means "nothing detected"."""

    boxes: tuple[BoundingBox, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self) -> Iterator[BoundingBox]:
        return iter(self.boxes)

    def __bool__(self) -> bool:
        return bool(self.boxes)

    def validate_against(self, height: int, width: int) -> None:
        for box in self.boxes:
            box.validate_against(height, width)

    def to_dict(self) -> dict:
        return {"boxes": [b.to_dict() for b in self.boxes]}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBoxSet":
        if not isinstance(d, dict) or "boxes" not in d or not isinstance(d["boxes"], list):
            raise DataError('box file must be a JSON object {"boxes": [...]}')
        return cls(tuple(BoundingBox.from_dict(b) for b in d["boxes"]))


@dataclass(frozen=True)
class HypothesisSample:
    """One (image, annotated boxes) pair inside a condition."""

    image_path: Path
    boxes: BoundingBoxSet
    image_size: tuple[int, int]  # (height, width) on disk


@dataclass(frozen=True)
class HypothesisDataset:
    """hypothesis name -> condition name -> samples."""

    hypotheses: dict[str, dict[str, list[HypothesisSample]]] = field(default_factory=dict)

    @property
    def sample_count(self) -> int:
        return sum(
            len(samples)
            for conditions in self.hypotheses.values()
            for samples in conditions.values()
        )


def resize_bilinear(data: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Classic bilinear resize (half-pixel centers, no antialiasing).

    Accepts (H, W) or (H, W, C) float arrays.
    """
    squeeze = data.ndim == 2
    arr = data[:, :, None] if squeeze else data
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=target, mode="bilinear", align_corners=False, antialias=False)
    result = out[0].permute(1, 2, 0).numpy()
    return result[:, :, 0] if squeeze else result


def load_image(path: str | Path, target_size: tuple[int, int] = DEFAULT_RESOLUTION) -> ImageTensor:
    """Decode a PNG/JPEG, resize bilinearly to ``target_size`` (H, W), normalize to [0, 1].

    The target dimensions must both be divisible by 32 so the encoder's
    three-scale pyramid comes out even.
    """
    h, w = target_size
    if h % 32 != 0 or w % 32 != 0:
        raise DataError(f"target size {target_size} not divisible by 32")
    path = Path(path)
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            original_size = (img.height, img.width)
            raw = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if original_size[0] == 0 or original_size[1] == 0:
        raise DataError(f"zero-dimension image {path}")
    resized = resize_bilinear(raw, (h, w))
    return ImageTensor(
        data=np.clip(resized, 0.0, 1.0),
        original_size=original_size,
        source_path=path,
    )


def _load_gray(path: str | Path) -> np.ndarray:
    """Read a grayscale PNG scaled to [0, 1] (8-bit /255, 16-bit /65535)."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(img, dtype=np.float64) / 65535.0
            elif img.mode == "L":
                arr = np.asarray(img, dtype=np.float64) / 255.0
            else:
                raise DataError(f"{path}: expected grayscale PNG, got mode {img.mode}")
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read map {path}: {exc}") from exc
    return arr.astype(np.float64)


def load_density_map(path: str | Path) -> DensityMap:
    """Load a grayscale PNG as a ground-truth density map in [0, 1]."""
    return DensityMap(_load_gray(path))


def load_fixation_map(path: str | Path) -> FixationMap:
    """Load a strictly two-level grayscale PNG as a binary fixation map.

    Any nonzero gray level becomes 1. Anti-aliased files (more than two
    distinct levels) are rejected.
    """
    arr = _load_gray(path)
    levels = np.unique(arr)
    if len(levels) > 2:
        raise DataError(f"{path}: fixation map is not binary ({len(levels)} gray levels)")
    return FixationMap((arr > 0).astype(np.uint8))


def load_saliency_map(path: str | Path) -> SaliencyMap:
    """Load a stored 16-bit grayscale saliency PNG back into [0, 1]."""
    return SaliencyMap(_load_gray(path))


def save_saliency_map(sal: SaliencyMap, path: str | Path) -> Path:
    """Persist a saliency map as 16-bit grayscale PNG (quantization < 1/65535)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    quantized = np.round(np.clip(sal.data, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(quantized).save(path, format="PNG")
    return path


def load_boxes(path: str | Path, image_size: Optional[tuple[int, int]] = None) -> BoundingBoxSet:
    """Parse a box JSON file; out-of-range coordinates are an error, never clamped.

    ``image_size`` (height, width), when given, bounds-checks every box.
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read box file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed box file {path}: {exc}") from exc
    boxes = BoundingBoxSet.from_dict(payload)
    if image_size is not None:
        boxes.validate_against(*image_size)
    return boxes


def save_boxes(boxes: BoundingBoxSet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(boxes.to_dict(), indent=2) + "\n")
    return path


_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)


def ingest_hypothesis_dataset(root: str | Path) -> HypothesisDataset:
    """Walk ``root/<hypothesis>/<condition>/<image>`` collecting validated samples.

    Every image needs a sidecar ``<stem>.boxes.json``; a missing sidecar,
    an empty condition directory, or a box outside its image are all errors.
    Nothing is silently dropped.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"hypothesis dataset root {root} is not a directory")
    hypotheses: dict[str, dict[str, list[HypothesisSample]]] = {}
    for hyp_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        conditions: dict[str, list[HypothesisSample]] = {}
        for cond_dir in sorted(p for p in hyp_dir.iterdir() if p.is_dir()):
            images = _image_files(cond_dir)
            if not images:
                raise DataError(f"empty condition directory: {cond_dir}")
            samples = []
            for image_path in images:
                sidecar = image_path.with_name(image_path.stem + ".boxes.json")
                if not sidecar.exists():
                    raise DataError(f"missing box annotation for {image_path}: expected {sidecar}")
                try:
                    with Image.open(image_path) as img:
                        size = (img.height, img.width)
                except (OSError, UnidentifiedImageError) as exc:
                    raise DataError(f"cannot read image {image_path}: {exc}") from exc
                boxes = load_boxes(sidecar, image_size=size)
                samples.append(HypothesisSample(image_path=image_path, boxes=boxes, image_size=size))
            conditions[cond_dir.name] = samples
        if conditions:
            hypotheses[hyp_dir.name] = conditions
    return HypothesisDataset(hypotheses=hypotheses)
