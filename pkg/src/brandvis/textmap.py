"""Text region detection and text map construction.

The text map keeps the original pixels inside detected text regions and is
zero everywhere else; it feeds the model's second encoder stream. Detection
itself is delegated to a pluggable adapter so any OCR/text detector can sit
behind the same interface.
"""
from __future__ import annotations

import json
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Protocol, Sequence

import numpy as np
from PIL import Image

from .datamodel import BoundingBox, ImageTensor
from .errors import DataError, DetectorError


@dataclass(frozen=True)
class TextRegionSet:
    """Axis-aligned text regions, max-inclusive, in the coordinates of one image."""

    regions: tuple[BoundingBox, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "regions", tuple(self.regions))

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self) -> Iterator[BoundingBox]:
        return iter(self.regions)

    def __bool__(self) -> bool:
        return bool(self.regions)


class TextDetector(Protocol):
    """Anything that can find text regions on an image."""

    def detect(self, image: ImageTensor) -> TextRegionSet: ...


class StubTextDetector:
    """Returns a fixed region set regardless of input.

    With no regions configured, the text stream is all zeros, which keeps the
    pipeline runnable without any external detector installed.
    """

    def __init__(self, regions: Sequence[BoundingBox] = ()) -> None:
        self._regions = TextRegionSet(tuple(regions))

    def detect(self, image: ImageTensor) -> TextRegionSet:
        for region in self._regions:
            region.validate_against(image.height, image.width)
        return self._regions


def _parse_region_entry(entry: object) -> BoundingBox:
    """Accept either a flat AABB [x_min, y_min, x_max, y_max] or a polygon
    [[x, y], ...] which collapses to its bounding rectangle."""
    if not isinstance(entry, list) or not entry:
        raise DetectorError(f"malformed region entry: {entry!r}")
    if all(isinstance(v, (int, float)) for v in entry):
        if len(entry) != 4:
            raise DetectorError(f"AABB region needs 4 numbers, got {len(entry)}")
        x_min, y_min, x_max, y_max = entry
    elif all(isinstance(v, list) and len(v) == 2 for v in entry):
        if len(entry) < 3:
            raise DetectorError(f"polygon region needs at least 3 vertices, got {len(entry)}")
        xs = [v[0] for v in entry]
        ys = [v[1] for v in entry]
        x_min, y_min, x_max, y_max = min(xs), min(ys), max(xs), max(ys)
    else:
        raise DetectorError(f"malformed region entry: {entry!r}")
    try:
        return BoundingBox(
            x_min=int(np.floor(x_min)),
            y_min=int(np.floor(y_min)),
            x_max=int(np.ceil(x_max)),
            y_max=int(np.ceil(y_max)),
        )
    except DataError as exc:
        raise DetectorError(f"invalid region geometry: {exc}") from exc


def parse_detector_output(stdout: str) -> list[BoundingBox]:
    """Parse the adapter line protocol: {"regions": [[x_min,y_min,x_max,y_max], ...]}."""
    stdout = stdout.strip()
    if not stdout:
        raise DetectorError("text detector produced no output")
    try:
        payload = json.loads(stdout.splitlines()[-1])
    except json.JSONDecodeError as exc:
        raise DetectorError(f"text detector output is not JSON: {exc}") from exc
    if not isinstance(payload, dict) or "regions" not in payload:
        raise DetectorError('text detector output missing "regions" key')
    if not isinstance(payload["regions"], list):
        raise DetectorError('"regions" must be a list')
    return [_parse_region_entry(e) for e in payload["regions"]]


def _rescale_box(box: BoundingBox, src: tuple[int, int], dst: tuple[int, int]) -> BoundingBox:
    """Map a max-inclusive box between resolutions, preserving coverage.

    Minima floor, maxima go through exclusive space and ceil, so the scaled
    region never loses the pixels it covered at the source resolution.
    """
    sy = dst[0] / src[0]
    sx = dst[1] / src[1]
    x_min = int(np.floor(box.x_min * sx))
    y_min = int(np.floor(box.y_min * sy))
    x_max = int(np.ceil((box.x_max + 1) * sx)) - 1
    y_max = int(np.ceil((box.y_max + 1) * sy)) - 1
    return BoundingBox(
        x_min=max(0, min(x_min, dst[1] - 1)),
        y_min=max(0, min(y_min, dst[0] - 1)),
        x_max=max(0, min(x_max, dst[1] - 1)),
        y_max=max(0, min(y_max, dst[0] - 1)),
    )


class SubprocessTextDetector:
    """Adapter for an external detector invoked as a one-shot subprocess.

    The command receives the image path as its final argument and must print
    a single JSON line ``{"regions": [[x_min, y_min, x_max, y_max], ...]}``
    (polygon vertex lists are also accepted). A nonzero exit is an error,
    not an empty result.
    """

    def __init__(self, command: Sequence[str], timeout: float = 60.0) -> None:
        if not command:
            raise DetectorError("empty detector command")
        self._command = list(command)
        self._timeout = timeout

    def _run(self, image_path: Path) -> list[BoundingBox]:
        try:
            proc = subprocess.run(
                [*self._command, str(image_path)],
                capture_output=True,
                text=True,
                timeout=self._timeout,
            )
        except FileNotFoundError as exc:
            raise DetectorError(f"text detector not found: {self._command[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise DetectorError(f"text detector timed out after {self._timeout}s") from exc
        if proc.returncode != 0:
            detail = proc.stderr.strip() or proc.stdout.strip() or "no output"
            raise DetectorError(f"text detector exited {proc.returncode}: {detail}")
        return parse_detector_output(proc.stdout)

    def detect(self, image: ImageTensor) -> TextRegionSet:
        if image.source_path is not None and Path(image.source_path).exists():
            # Detect on the original file for full detail, then map the
            # coordinates down to the working resolution.
            raw = self._run(Path(image.source_path))
            src = image.original_size
        else:
            with tempfile.NamedTemporaryFile(suffix=".png", delete=False) as tmp:
                tmp_path = Path(tmp.name)
            try:
                arr = (np.clip(image.data, 0.0, 1.0) * 255.0).round().astype(np.uint8)
                Image.fromarray(arr, mode="RGB").save(tmp_path, format="PNG")
                raw = self._run(tmp_path)
                src = (image.height, image.width)
            finally:
                tmp_path.unlink(missing_ok=True)
        dst = (image.height, image.width)
        clipped = []
        for box in raw:
            if box.x_min >= src[1] or box.y_min >= src[0]:
                raise DetectorError(
                    f"detector region ({box.x_min},{box.y_min},{box.x_max},{box.y_max}) "
                    f"lies outside source image {src[1]}x{src[0]}"
                )
            # Detectors may overshoot the far edge by a pixel; clip there only.
            safe = BoundingBox(
                x_min=box.x_min,
                y_min=box.y_min,
                x_max=min(box.x_max, src[1] - 1),
                y_max=min(box.y_max, src[0] - 1),
            )
            clipped.append(safe if src == dst else _rescale_box(safe, src, dst))
        return TextRegionSet(tuple(clipped))


def region_mask(regions: TextRegionSet, height: int, width: int) -> np.ndarray:
    """Boolean (H, W) union of all regions. Overlaps are harmless."""
    mask = np.zeros((height, width), dtype=bool)
    for r in regions:
        r.validate_against(height, width)
        mask[r.y_min : r.y_max + 1, r.x_min : r.x_max + 1] = True
    return mask


def build_text_map(image: ImageTensor, regions: TextRegionSet) -> np.ndarray:
    """Text map: original pixel values inside text regions, zero elsewhere.

    Returns (H, W, 3) float32 in [0, 1], same shape as the input image.
    """
    mask = region_mask(regions, image.height, image.width)
    return (image.data * mask[:, :, None]).astype(np.float32)


def detect_text_map(image: ImageTensor, detector: TextDetector) -> np.ndarray:
    """Run detection and build the text map in one step."""
    return build_text_map(image, detector.detect(image))
