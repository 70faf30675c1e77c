"""Training loss and evaluation metrics for saliency prediction.

Two families live here on purpose:

* the composite training loss, written in torch so gradients flow
* evaluation metrics, written in numpy against ground-truth maps from disk

Distribution-style comparisons (KL, SIM) normalize both maps to unit mass
first; value-space comparisons (CC, NSS, MSE) use the raw [0, 1] maps. All
standard deviations are population ones (ddof = 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .datamodel import DensityMap, FixationMap, SaliencyMap, resize_bilinear
from .errors import DataError

EPSILON = 2.2e-16


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite objective. The CC term is negative because
    correlation is a similarity: maximizing it means subtracting it."""

    kl: float = 10.0
    cc: float = -3.0
    mse: float = 5.0
    epsilon: float = EPSILON


def _flatten_pair(pred: torch.Tensor, target: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Collapse (H, W) or (B, H, W) inputs to (B, N)."""
    if pred.shape != target.shape:
        raise DataError(f"loss inputs must share a shape, got {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.dim() == 2:
        pred, target = pred[None], target[None]
    if pred.dim() != 3:
        raise DataError(f"loss inputs must be (H, W) or (B, H, W), got {tuple(pred.shape)}")
    return pred.flatten(1), target.flatten(1)


def loss_components(
    pred: torch.Tensor, target: torch.Tensor, weights: LossWeights = LossWeights()
) -> dict[str, torch.Tensor]:
    """Unweighted KL, CC, and MSE terms, each averaged over the batch."""
    p, g = _flatten_pair(pred, target)
    eps = weights.epsilon

    p_dist = p / (p.sum(dim=1, keepdim=True) + eps)
    g_dist = g / (g.sum(dim=1, keepdim=True) + eps)
    kl = (g_dist * torch.log(eps + g_dist / (p_dist + eps))).sum(dim=1)

    p_c = p - p.mean(dim=1, keepdim=True)
    g_c = g - g.mean(dim=1, keepdim=True)
    cov = (p_c * g_c).mean(dim=1)
    denom = p_c.pow(2).mean(dim=1).sqrt() * g_c.pow(2).mean(dim=1).sqrt()
    cc = cov / (denom + eps)

    mse = (p - g).pow(2).mean(dim=1)

    return {"kl": kl.mean(), "cc": cc.mean(), "mse": mse.mean()}


def composite_loss(
    pred: torch.Tensor, target: torch.Tensor, weights: LossWeights = LossWeights()
) -> torch.Tensor:
    """Weighted sum of KL, CC, and MSE between predicted and target maps."""
    parts = loss_components(pred, target, weights)
    return weights.kl * parts["kl"] + weights.cc * parts["cc"] + weights.mse * parts["mse"]


def _check_pair(pred: np.ndarray, reference: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if pred.shape != reference.shape:
        raise DataError(f"metric inputs must share a shape, got {pred.shape} vs {reference.shape}")
    return pred, reference


def _to_distribution(arr: np.ndarray, name: str) -> np.ndarray:
    total = arr.sum()
    if total <= 0.0:
        raise DataError(f"{name} has zero mass: distribution metrics undefined")
    return arr / total


def kl_divergence(pred: np.ndarray, density: np.ndarray) -> float:
    """KL from the ground-truth distribution to the predicted one.

    Both maps are normalized to unit mass. Lower is better; 0 iff identical
    (up to the epsilon regularizer).
    """
    pred, density = _check_pair(pred, density)
    p = _to_distribution(pred, "predicted map")
    g = _to_distribution(density, "density map")
    return float(np.sum(g * np.log(EPSILON + g / (p + EPSILON))))


def similarity(pred: np.ndarray, density: np.ndarray) -> float:
    """Histogram intersection of the two unit-mass maps; 1 iff identical."""
    pred, density = _check_pair(pred, density)
    p = _to_distribution(pred, "predicted map")
    g = _to_distribution(density, "density map")
    return float(np.minimum(p, g).sum())


def correlation_coefficient(pred: np.ndarray, density: np.ndarray) -> float:
    """Pearson correlation of the raw maps (population standard deviations)."""
    pred, density = _check_pair(pred, density)
    p_c = pred - pred.mean()
    g_c = density - density.mean()
    denom = np.sqrt((p_c**2).mean()) * np.sqrt((g_c**2).mean())
    if denom == 0.0:
        raise DataError("constant map: correlation undefined")
    return float((p_c * g_c).mean() / denom)


def mse(pred: np.ndarray, density: np.ndarray) -> float:
    """Mean squared error of the raw maps."""
    pred, density = _check_pair(pred, density)
    return float(((pred - density) ** 2).mean())


def nss(pred: np.ndarray, fixations: np.ndarray) -> float:
    """Mean z-scored saliency at fixated pixels (population sigma)."""
    pred, fixations = _check_pair(pred, fixations)
    if not np.all(np.isin(np.unique(fixations), (0, 1))):
        raise DataError("fixation map is not binary")
    if not np.any(fixations):
        raise DataError("no fixations: NSS undefined")
    sigma = pred.std()
    if sigma == 0.0:
        raise DataError("constant saliency map: NSS undefined")
    z = (pred - pred.mean()) / sigma
    return float(z[fixations.astype(bool)].mean())


def auc_judd(pred: np.ndarray, fixations: np.ndarray) -> float:
    """ROC area with fixated pixels as positives and every pixel as the
    negative pool, sweeping all distinct saliency values as thresholds.

    Equivalent to the Mann-Whitney U statistic with half weight on ties,
    so a constant map scores exactly 0.5.
    """
    pred, fixations = _check_pair(pred, fixations)
    if not np.all(np.isin(np.unique(fixations), (0, 1))):
        raise DataError("fixation map is not binary")
    mask = fixations.astype(bool)
    if not mask.any():
        raise DataError("no fixations: AUC undefined")
    positives = np.sort(pred[mask].ravel())
    pool = np.sort(pred.ravel())
    n_pos, n_pool = positives.size, pool.size
    below = np.searchsorted(pool, positives, side="left")
    above_or_eq = np.searchsorted(pool, positives, side="right")
    u = below.sum() + 0.5 * (above_or_eq - below).sum()
    return float(u / (n_pos * n_pool))


METRIC_NAMES = ("kl", "cc", "sim", "mse", "nss", "auc")


@dataclass(frozen=True)
class SampleMetrics:
    """Metric values for one sample; metrics that failed carry an error string."""

    values: dict[str, float] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class MetricsReport:
    """Dataset-level aggregation. ``means`` average only the samples where a
    metric was defined; ``counts`` say how many that was."""

    per_sample: tuple[SampleMetrics, ...]
    means: dict[str, float]
    counts: dict[str, int]

    @property
    def sample_count(self) -> int:
        return len(self.per_sample)


def _align(pred: np.ndarray, reference_shape: tuple[int, int]) -> np.ndarray:
    if pred.shape == reference_shape:
        return pred
    return np.clip(resize_bilinear(pred, reference_shape), 0.0, 1.0)


def evaluate_sample(
    pred: SaliencyMap,
    density: Optional[DensityMap] = None,
    fixations: Optional[FixationMap] = None,
) -> SampleMetrics:
    """Compute every applicable metric for one prediction.

    The prediction is resized to each reference's resolution. A metric that
    is undefined for this sample (constant map, say) is recorded as an error
    instead of poisoning the aggregate.
    """
    if density is None and fixations is None:
        raise DataError("nothing to evaluate against: no density and no fixations")
    values: dict[str, float] = {}
    errors: dict[str, str] = {}

    def attempt(name: str, fn, *args) -> None:
        try:
            values[name] = fn(*args)
        except DataError as exc:
            errors[name] = str(exc)

    if density is not None:
        p = _align(pred.data, density.data.shape)
        attempt("kl", kl_divergence, p, density.data)
        attempt("cc", correlation_coefficient, p, density.data)
        attempt("sim", similarity, p, density.data)
        attempt("mse", mse, p, density.data)
    if fixations is not None:
        p = _align(pred.data, fixations.data.shape)
        attempt("nss", nss, p, fixations.data)
        attempt("auc", auc_judd, p, fixations.data)
    return SampleMetrics(values=values, errors=errors)


def evaluate_dataset(
    samples: Sequence[tuple[SaliencyMap, Optional[DensityMap], Optional[FixationMap]]],
) -> MetricsReport:
    """Evaluate a batch of (prediction, density, fixations) triples."""
    if not samples:
        raise DataError("empty evaluation set")
    per_sample = tuple(evaluate_sample(p, d, f) for p, d, f in samples)
    means: dict[str, float] = {}
    counts: dict[str, int] = {}
    for name in METRIC_NAMES:
        found = [s.values[name] for s in per_sample if name in s.values]
        counts[name] = len(found)
        if found:
            means[name] = float(np.mean(found))
    return MetricsReport(per_sample=per_sample, means=means, counts=counts)
