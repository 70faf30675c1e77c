"""Command-line entry points.

Every command talks in files and prints machine-friendly output. Errors go
to stderr as a single JSON line and map to stable exit codes:

    2  usage (bad flags, missing arguments)
    3  input/output problems (unreadable files, bad annotations)
    4  model problems (bad checkpoint, wrong resolution)
    5  detector failures (adapter crashed, bad adapter output)
"""
from __future__ import annotations

import functools
import json
import shlex
import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np
import torch
from PIL import Image

from .datamodel import (
    load_boxes,
    load_density_map,
    load_fixation_map,
    load_image,
    load_saliency_map,
    ingest_hypothesis_dataset,
    resize_bilinear,
    save_saliency_map,
)
from .errors import DataError, DetectorError, ModelError
from .model.network import ModelConfig, SaliencyModel, load_checkpoint
from .objectives import evaluate_dataset
from .pipeline import analyze_image
from .scoring import (
    ScoreConfig,
    SubprocessLogoDetector,
    brand_attention_score,
    hypothesis_report,
    run_hypothesis,
)
from .textmap import SubprocessTextDetector, build_text_map
from .training import TrainConfig, TrainSample, train

EXIT_IO = 3
EXIT_MODEL = 4
EXIT_DETECTOR = 5


def _fail(kind: str, code: int, message: str) -> None:
    click.echo(json.dumps({"error": kind, "message": message}), err=True)
    sys.exit(code)


def handles_errors(fn):
    """Translate library exceptions into exit codes and one-line errors."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DetectorError as exc:
            _fail("detector", EXIT_DETECTOR, str(exc))
        except ModelError as exc:
            _fail("model", EXIT_MODEL, str(exc))
        except DataError as exc:
            _fail("io", EXIT_IO, str(exc))
        except OSError as exc:
            _fail("io", EXIT_IO, str(exc))

    return wrapper


def _parse_resolution(value: str) -> tuple[int, int]:
    try:
        h, w = (int(p) for p in value.lower().split("x"))
    except ValueError:
        raise click.BadParameter(f"resolution must look like 288x384, got {value!r}")
    return h, w


def _get_model(checkpoint: Optional[str], resolution: str) -> SaliencyModel:
    """Load a checkpoint, or build a fresh seeded model when none is given.

    The fresh model is useless for real predictions but keeps every command
    runnable end to end without a training run.
    """
    if checkpoint is not None:
        return load_checkpoint(checkpoint)
    torch.manual_seed(0)
    model = SaliencyModel(ModelConfig(resolution=_parse_resolution(resolution)))
    model.eval()
    return model


def _text_detector(command: Optional[str]):
    return SubprocessTextDetector(tuple(shlex.split(command))) if command else None


resolution_option = click.option(
    "--resolution", default="288x384", show_default=True,
    help="Working resolution HxW; both sides must be multiples of 32.",
)
checkpoint_option = click.option(
    "--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None,
    help="Trained model weights (.pt). Omitted: an untrained seeded model.",
)
text_detector_option = click.option(
    "--text-detector", default=None,
    help='External text detector command, e.g. "python3 my_ocr.py --fast".',
)


@click.group()
@click.version_option()
def main() -> None:
    """Brand visibility toolkit: saliency prediction and box scoring."""


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True,
              help="Where to write the 16-bit grayscale saliency PNG.")
@checkpoint_option
@resolution_option
@text_detector_option
@handles_errors
def saliency(image: str, output: str, checkpoint: Optional[str], resolution: str,
             text_detector: Optional[str]) -> None:
    """Predict a saliency map for IMAGE at its original resolution."""
    model = _get_model(checkpoint, resolution)
    result = analyze_image(model, image, _text_detector(text_detector))
    path = save_saliency_map(result.saliency, output)
    click.echo(str(path))


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--boxes", "boxes_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help='Box annotations JSON {"boxes": [[x0,y0,x1,y1], ...]}.')
@click.option("--logo-detector", default=None,
              help="External logo detector command, used when --boxes is absent.")
@click.option("--threshold", type=float, default=0.0, show_default=True,
              help="Saliency below this value is ignored.")
@click.option("--mode", type=click.Choice(["union", "per_box_sum"]), default="union",
              show_default=True)
@click.option("--scale", type=click.Choice(["percent", "fraction"]), default="percent",
              show_default=True)
@checkpoint_option
@resolution_option
@text_detector_option
@handles_errors
def score(image: str, boxes_path: Optional[str], logo_detector: Optional[str],
          threshold: float, mode: str, scale: str, checkpoint: Optional[str],
          resolution: str, text_detector: Optional[str]) -> None:
    """Print the brand attention score for IMAGE as a decimal."""
    model = _get_model(checkpoint, resolution)
    result = analyze_image(model, image, _text_detector(text_detector))
    h, w = result.image.original_size
    if boxes_path is not None:
        box_set = load_boxes(boxes_path)
    elif logo_detector is not None:
        detector = SubprocessLogoDetector(tuple(shlex.split(logo_detector)))
        box_set = detector.detect(Path(image))
    else:
        raise click.UsageError("give either --boxes or --logo-detector")
    for box in box_set:
        box.validate_against(h, w)
    config = ScoreConfig(threshold=threshold, mode=mode, scale=scale)
    value = brand_attention_score(result.saliency, box_set, config)
    click.echo(f"{value:.10f}")


@main.command("detect-logos")
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--detector", required=True,
              help="External logo detector command; gets the image path appended.")
@click.option("--min-confidence", type=float, default=None,
              help="Drop detections below this confidence.")
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None,
              help="Write boxes JSON here instead of stdout.")
@handles_errors
def detect_logos(image: str, detector: str, min_confidence: Optional[float],
                 output: Optional[str]) -> None:
    """Run a logo detector adapter on IMAGE and emit its boxes as JSON."""
    kwargs = {} if min_confidence is None else {"min_confidence": min_confidence}
    det = SubprocessLogoDetector(tuple(shlex.split(detector)), **kwargs)
    box_set = det.detect(Path(image))
    payload = json.dumps(box_set.to_dict())
    if output is not None:
        Path(output).write_text(payload + "\n")
        click.echo(output)
    else:
        click.echo(payload)


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True,
              help="Where to write the text-map PNG (RGB, text pixels kept).")
@resolution_option
@text_detector_option
@handles_errors
def textmap(image: str, output: str, resolution: str, text_detector: Optional[str]) -> None:
    """Build the text map for IMAGE: pixels inside detected text, zero elsewhere."""
    if text_detector is None:
        raise click.UsageError("--text-detector is required: a text map needs detections")
    img = load_image(image, target_size=_parse_resolution(resolution))
    regions = _text_detector(text_detector).detect(img)
    tmap = build_text_map(img, regions)
    Image.fromarray(np.round(tmap * 255.0).astype(np.uint8), mode="RGB").save(output)
    click.echo(output)


@main.command("train")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False),
              required=True,
              help="Directory of <name>.png images with <name>.density.png targets.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True,
              help="Output directory for checkpoints and the training log.")
@click.option("--epochs", type=int, default=10, show_default=True)
@click.option("--batch-size", type=int, default=8, show_default=True)
@click.option("--learning-rate", type=float, default=5e-4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@resolution_option
@text_detector_option
@handles_errors
def train_cmd(data_dir: str, out_dir: str, epochs: int, batch_size: int,
              learning_rate: float, seed: int, resolution: str,
              text_detector: Optional[str]) -> None:
    """Train a model on an image/density directory; writes epoch checkpoints."""
    target = _parse_resolution(resolution)
    detector = _text_detector(text_detector)
    samples = []
    root = Path(data_dir)
    for image_path in sorted(root.glob("*.png")):
        if image_path.name.endswith(".density.png"):
            continue
        density_path = image_path.with_name(image_path.stem + ".density.png")
        if not density_path.exists():
            raise DataError(f"missing density target for {image_path}: expected {density_path}")
        img = load_image(image_path, target_size=target)
        tmap = build_text_map(img, detector.detect(img)) if detector else np.zeros_like(img.data)
        density = load_density_map(density_path)
        density_resized = density.data
        if density_resized.shape != target:
            density_resized = np.clip(resize_bilinear(density_resized, target), 0.0, None)
        samples.append(TrainSample(image=img.data, text_map=tmap, density=density_resized))
    if not samples:
        raise DataError(f"no .png images found in {data_dir}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    model = SaliencyModel(ModelConfig(resolution=target))
    config = TrainConfig(
        learning_rate=learning_rate,
        batch_size=batch_size,
        epochs=epochs,
        seed=seed,
        checkpoint_dir=out,
        log_path=out / "train.ndjson",
    )
    result = train(model, samples, config)
    click.echo(json.dumps({
        "epochs": len(result.records),
        "steps": result.total_steps,
        "final_loss": result.final_loss,
        "checkpoints": [str(p) for p in result.checkpoint_paths],
        "log": str(out / "train.ndjson"),
    }))


METRIC_DISPLAY = (("cc", "CC"), ("kl", "KL"), ("auc", "AUC"), ("nss", "NSS"), ("sim", "SIM"))


def _fmt3(value: float) -> str:
    out = f"{value:.3f}"
    return "0.000" if out == "-0.000" else out


@main.command()
@click.option("--pred", "pred_dir", type=click.Path(exists=True, file_okay=False),
              required=True, help="Directory of predicted saliency PNGs.")
@click.option("--gt", "gt_dir", type=click.Path(exists=True, file_okay=False),
              required=True,
              help="Ground truth: <name>.png densities, optional <name>.fixations.png.")
@handles_errors
def evaluate(pred_dir: str, gt_dir: str) -> None:
    """Compare predictions to ground truth; print mean±sd for each metric."""
    pred_root, gt_root = Path(pred_dir), Path(gt_dir)
    triples = []
    for gt_path in sorted(gt_root.glob("*.png")):
        if gt_path.name.endswith(".fixations.png"):
            continue
        pred_path = pred_root / gt_path.name
        if not pred_path.exists():
            raise DataError(f"missing prediction for {gt_path.name}: expected {pred_path}")
        pred = load_saliency_map(pred_path)
        density = load_density_map(gt_path)
        fix_path = gt_path.with_name(gt_path.stem + ".fixations.png")
        fixations = load_fixation_map(fix_path) if fix_path.exists() else None
        triples.append((pred, density, fixations))
    if not triples:
        raise DataError(f"no ground truth maps found in {gt_dir}")

    report = evaluate_dataset(triples)
    click.echo(f"n {len(triples)}")
    for key, label in METRIC_DISPLAY:
        mean = report.means.get(key)
        if mean is None:
            click.echo(f"{label} n/a")
            continue
        values = [s.values[key] for s in report.per_sample if key in s.values]
        sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        line = f"{label} {_fmt3(mean)}±{_fmt3(sd)}"
        if len(values) != len(triples):
            line += f" (n={len(values)})"
        click.echo(line)


@main.command()
@click.argument("dataset", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), default=None,
              help="Write the CSV report here; stdout when omitted.")
@click.option("--threshold", type=float, default=0.0, show_default=True)
@click.option("--mode", type=click.Choice(["union", "per_box_sum"]), default="union",
              show_default=True)
@checkpoint_option
@resolution_option
@text_detector_option
@handles_errors
def hypothesis(dataset: str, output: Optional[str], threshold: float, mode: str,
               checkpoint: Optional[str], resolution: str,
               text_detector: Optional[str]) -> None:
    """Score a hypothesis dataset (hypothesis/condition/images) into a CSV report."""
    data = ingest_hypothesis_dataset(dataset)
    model = _get_model(checkpoint, resolution)
    detector = _text_detector(text_detector)

    def provider(sample):
        return analyze_image(model, sample.image_path, detector).saliency

    config = ScoreConfig(threshold=threshold, mode=mode)
    result = run_hypothesis(data, provider, config)
    report = hypothesis_report(result.stats)
    if output is not None:
        Path(output).write_text(report)
        click.echo(output)
    else:
        click.echo(report, nl=False)


if __name__ == "__main__":
    main()
