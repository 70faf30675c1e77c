"""Brand attention scoring and the hypothesis comparison harness.

A brand element's score is the share of normalized saliency mass that falls
inside its bounding boxes. Two box-combination modes exist:

* ``union`` (default): overlapping boxes count each pixel once, so scores
  stay true probabilities and never exceed 1
* ``per_box_sum``: every box sums independently and overlaps double-count;
  this is the literal per-box accumulation and is kept for comparability

Logo boxes can come from annotations or from any external detector wired
through the subprocess adapter.
"""
from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Protocol, Sequence

import numpy as np

from .datamodel import (
    BoundingBox,
    BoundingBoxSet,
    HypothesisDataset,
    HypothesisSample,
    SaliencyMap,
)
from .errors import DataError, DetectorError


@dataclass(frozen=True)
class ScoreConfig:
    """Scoring knobs: saliency below ``threshold`` is discarded before
    normalization; ``percent`` scales the result by 100."""

    threshold: float = 0.0
    mode: Literal["union", "per_box_sum"] = "union"
    scale: Literal["percent", "fraction"] = "percent"

    def __post_init__(self) -> None:
        if self.threshold < 0.0:
            raise DataError(f"threshold must be nonnegative, got {self.threshold}")
        if self.mode not in ("union", "per_box_sum"):
            raise DataError(f"unknown mode {self.mode!r}")
        if self.scale not in ("percent", "fraction"):
            raise DataError(f"unknown scale {self.scale!r}")


def _thresholded_mass(saliency: np.ndarray, threshold: float) -> tuple[np.ndarray, float]:
    """Zero out sub-threshold saliency; return the map and its total mass.

    Callers divide by the total once at the end instead of normalizing the
    map up front, so a region holding all the mass scores exactly 1.
    """
    s = np.asarray(saliency, dtype=np.float64)
    if s.ndim != 2:
        raise DataError(f"saliency must be 2-D, got shape {s.shape}")
    if threshold > 0.0:
        s = np.where(s < threshold, 0.0, s)
    total = float(s.sum())
    if total <= 0.0:
        raise DataError("empty saliency mass after thresholding")
    return s, total


def brand_attention_score(
    saliency: SaliencyMap | np.ndarray,
    boxes: BoundingBoxSet,
    config: ScoreConfig = ScoreConfig(),
) -> float:
    """Fraction (or percentage) of saliency mass inside the brand boxes.

    Boxes use max-inclusive coordinates in the map's own resolution. An
    empty box set scores 0; a map with no mass left after thresholding is
    an error rather than a silent 0.
    """
    data = saliency.data if isinstance(saliency, SaliencyMap) else saliency
    if not boxes:
        return 0.0
    s, total = _thresholded_mass(data, config.threshold)
    h, w = s.shape
    boxes.validate_against(h, w)

    if config.mode == "union":
        mask = np.zeros((h, w), dtype=bool)
        for b in boxes:
            mask[b.y_min : b.y_max + 1, b.x_min : b.x_max + 1] = True
        score = float(s[mask].sum()) / total
    else:
        score = (
            float(sum(s[b.y_min : b.y_max + 1, b.x_min : b.x_max + 1].sum() for b in boxes))
            / total
        )
    return score * 100.0 if config.scale == "percent" else score


def region_attention_score(
    saliency: SaliencyMap | np.ndarray,
    box: BoundingBox,
    config: ScoreConfig = ScoreConfig(),
) -> float:
    """Score a single region."""
    return brand_attention_score(saliency, BoundingBoxSet((box,)), config)


# --- logo detection -------------------------------------------------------


class LogoDetector(Protocol):
    """Anything that can propose brand boxes for an image file."""

    def detect(self, image_path: Path) -> BoundingBoxSet: ...


class StubLogoDetector:
    """Fixed detections for tests and offline runs."""

    def __init__(self, boxes: Sequence[BoundingBox] = ()) -> None:
        self._boxes = BoundingBoxSet(tuple(boxes))

    def detect(self, image_path: Path) -> BoundingBoxSet:
        return self._boxes


def parse_logo_output(stdout: str) -> BoundingBoxSet:
    """Adapter line protocol: {"boxes": [[x_min, y_min, x_max, y_max, confidence?], ...]}."""
    stdout = stdout.strip()
    if not stdout:
        raise DetectorError("logo detector produced no output")
    try:
        payload = json.loads(stdout.splitlines()[-1])
    except json.JSONDecodeError as exc:
        raise DetectorError(f"logo detector output is not JSON: {exc}") from exc
    if not isinstance(payload, dict) or not isinstance(payload.get("boxes"), list):
        raise DetectorError('logo detector output missing "boxes" list')
    parsed = []
    for entry in payload["boxes"]:
        if not isinstance(entry, list) or len(entry) not in (4, 5):
            raise DetectorError(f"malformed box entry: {entry!r}")
        if not all(isinstance(v, (int, float)) for v in entry):
            raise DetectorError(f"malformed box entry: {entry!r}")
        try:
            parsed.append(
                BoundingBox(
                    x_min=int(np.floor(entry[0])),
                    y_min=int(np.floor(entry[1])),
                    x_max=int(np.ceil(entry[2])),
                    y_max=int(np.ceil(entry[3])),
                    confidence=float(entry[4]) if len(entry) == 5 else None,
                )
            )
        except DataError as exc:
            raise DetectorError(f"invalid detector box: {exc}") from exc
    return BoundingBoxSet(tuple(parsed))


class SubprocessLogoDetector:
    """External logo detector run as a one-shot subprocess.

    Receives the image path as its final argument; must print one JSON line
    with a "boxes" list. Nonzero exit means failure, never "no logos".
    """

    def __init__(
        self,
        command: Sequence[str],
        timeout: float = 60.0,
        min_confidence: float = 0.0,
    ) -> None:
        if not command:
            raise DetectorError("empty detector command")
        self._command = list(command)
        self._timeout = timeout
        self._min_confidence = min_confidence

    def detect(self, image_path: Path) -> BoundingBoxSet:
        image_path = Path(image_path)
        if not image_path.exists():
            raise DetectorError(f"image not found: {image_path}")
        try:
            proc = subprocess.run(
                [*self._command, str(image_path)],
                capture_output=True,
                text=True,
                timeout=self._timeout,
            )
        except FileNotFoundError as exc:
            raise DetectorError(f"logo detector not found: {self._command[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise DetectorError(f"logo detector timed out after {self._timeout}s") from exc
        if proc.returncode != 0:
            detail = proc.stderr.strip() or proc.stdout.strip() or "no output"
            raise DetectorError(f"logo detector exited {proc.returncode}: {detail}")
        boxes = parse_logo_output(proc.stdout)
        if self._min_confidence > 0.0:
            boxes = BoundingBoxSet(
                tuple(
                    b
                    for b in boxes
                    if b.confidence is None or b.confidence >= self._min_confidence
                )
            )
        return boxes


# --- hypothesis harness ----------------------------------------------------


@dataclass(frozen=True)
class ConditionStats:
    """Mean and standard error of the brand score inside one condition."""

    hypothesis: str
    condition: str
    n: int
    mean: float
    se: float
    winner: bool = False


@dataclass(frozen=True)
class HypothesisResult:
    stats: tuple[ConditionStats, ...]
    scores: dict[tuple[str, str], tuple[float, ...]] = field(default_factory=dict)


def summarize_scores(scores: dict[tuple[str, str], Sequence[float]]) -> tuple[ConditionStats, ...]:
    """Aggregate raw per-image scores into per-condition stats.

    SE is the sample standard deviation (n-1) over sqrt(n); a singleton
    condition gets SE 0. Within a hypothesis the highest mean wins; rows
    sort by hypothesis, then mean descending, then condition name.
    """
    by_hypothesis: dict[str, list[ConditionStats]] = {}
    for (hyp, cond), values in scores.items():
        if not values:
            raise DataError(f"condition {hyp}/{cond} has no scores")
        arr = np.asarray(values, dtype=np.float64)
        se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
        by_hypothesis.setdefault(hyp, []).append(
            ConditionStats(hypothesis=hyp, condition=cond, n=arr.size, mean=float(arr.mean()), se=se)
        )
    rows: list[ConditionStats] = []
    for hyp in sorted(by_hypothesis):
        conds = sorted(by_hypothesis[hyp], key=lambda c: (-c.mean, c.condition))
        rows.extend(
            ConditionStats(
                hypothesis=c.hypothesis,
                condition=c.condition,
                n=c.n,
                mean=c.mean,
                se=c.se,
                winner=(i == 0),
            )
            for i, c in enumerate(conds)
        )
    return tuple(rows)


def run_hypothesis(
    dataset: HypothesisDataset,
    map_provider: Callable[[HypothesisSample], SaliencyMap],
    config: ScoreConfig = ScoreConfig(),
) -> HypothesisResult:
    """Score every sample of every condition and aggregate.

    ``map_provider`` returns each sample's saliency map in the coordinate
    space of its annotations (usually the original image resolution).
    """
    if not dataset.hypotheses:
        raise DataError("hypothesis dataset is empty")
    scores: dict[tuple[str, str], tuple[float, ...]] = {}
    for hyp, conditions in dataset.hypotheses.items():
        for cond, samples in conditions.items():
            values = []
            for sample in samples:
                sal = map_provider(sample)
                if sal.data.shape != sample.image_size:
                    raise DataError(
                        f"saliency map {sal.data.shape} does not match image "
                        f"{sample.image_size} for {sample.image_path}"
                    )
                values.append(brand_attention_score(sal, sample.boxes, config))
            scores[(hyp, cond)] = tuple(values)
    return HypothesisResult(stats=summarize_scores(scores), scores=scores)


def hypothesis_report(stats: Sequence[ConditionStats]) -> str:
    """Render stats as CSV: hypothesis,condition,n,mean,se,winner.

    Means and SEs carry two decimals; the winner column says "yes" on the
    best row of each hypothesis and stays empty otherwise.
    """
    lines = ["hypothesis,condition,n,mean,se,winner"]
    for row in stats:
        winner = "yes" if row.winner else ""
        lines.append(
            f"{row.hypothesis},{row.condition},{row.n},{row.mean:.2f},{row.se:.2f},{winner}"
        )
    return "\n".join(lines) + "\n"
