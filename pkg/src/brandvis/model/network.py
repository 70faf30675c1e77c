"""Twin-stream saliency network.

The image and its text map each pass through a three-scale CNN encoder
(ResNet-50 taps at strides 8, 16, 32), per-scale 1x1 projections with
learnable position embeddings, and a short transformer encoder per scale.
A learned scalar gate blends the two streams at each scale, and a decoder
multiplies the finer fused scales back in while upsampling to input
resolution.

By default the two streams share one set of encoder weights; set
``share_encoders=False`` for fully independent twins (roughly doubles the
parameter count).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn
from torchvision.models import resnet50

from ..datamodel import ImageTensor, SaliencyMap
from ..errors import DataError, ModelError
from .attention import TransformerEncoder

CHECKPOINT_VERSION = 1

# (stride, backbone channels, projected width) for the three taps
SCALES = ((8, 512, 512), (16, 1024, 768), (32, 2048, 768))


@dataclass(frozen=True)
class ModelConfig:
    """Construction-time knobs. The resolution is baked into the position
    embeddings, so a checkpoint only fits inputs of its own resolution."""

    resolution: tuple[int, int] = (288, 384)  # (H, W)
    share_encoders: bool = True
    alpha_init: float = 0.5
    transformer_depth: int = 2
    mlp_ratio: int = 4

    def __post_init__(self) -> None:
        h, w = self.resolution
        if h % 32 != 0 or w % 32 != 0:
            raise ModelError(f"resolution {self.resolution} not divisible by 32")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(
                resolution=tuple(d["resolution"]),
                share_encoders=bool(d["share_encoders"]),
                alpha_init=float(d["alpha_init"]),
                transformer_depth=int(d["transformer_depth"]),
                mlp_ratio=int(d["mlp_ratio"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"malformed model config: {exc}") from exc


def _batch_stats_norm(channels: int) -> nn.BatchNorm2d:
    return nn.BatchNorm2d(channels, track_running_stats=False)


class ResNetTaps(nn.Module):
    """ResNet-50 trunk exposing the stride-8/16/32 feature maps."""

    def __init__(self) -> None:
        super().__init__()
        net = resnet50(weights=None, norm_layer=_batch_stats_norm)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layer1 = net.layer1
        self.layer2 = net.layer2
        self.layer3 = net.layer3
        self.layer4 = net.layer4

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        x = self.stem(x)
        x = self.layer1(x)
        f8 = self.layer2(x)     # (B, 512, H/8, W/8)
        f16 = self.layer3(f8)   # (B, 1024, H/16, W/16)
        f32 = self.layer4(f16)  # (B, 2048, H/32, W/32)
        return f8, f16, f32


class ScaleEncoder(nn.Module):
    """Projection + position embedding + transformer for one scale."""

    def __init__(self, in_ch: int, dim: int, tokens_hw: tuple[int, int], depth: int, mlp_ratio: int) -> None:
        super().__init__()
        self.dim = dim
        self.tokens_hw = tokens_hw
        self.project = nn.Conv2d(in_ch, dim, kernel_size=1)
        self.pos_embed = nn.Parameter(torch.zeros(1, tokens_hw[0] * tokens_hw[1], dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.transformer = TransformerEncoder(dim, depth=depth, mlp_ratio=mlp_ratio)

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        b = feat.shape[0]
        h, w = self.tokens_hw
        if feat.shape[2:] != (h, w):
            raise ModelError(
                f"feature grid {tuple(feat.shape[2:])} does not match the "
                f"position embedding grid {(h, w)}; the model was built for "
                "a different resolution"
            )
        tokens = self.project(feat).flatten(2).transpose(1, 2)  # (B, n, dim)
        tokens = self.transformer(tokens + self.pos_embed)
        return tokens.transpose(1, 2).reshape(b, self.dim, h, w)


class DecoderStage(nn.Module):
    """2x nearest upsample, conv3x3 + BN, optional fused-scale gating, ReLU."""

    def __init__(self, in_ch: int, out_ch: int) -> None:
        super().__init__()
        self.upsample = nn.Upsample(scale_factor=2, mode="nearest")
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1)
        # batch statistics in every mode: small-batch training otherwise
        # bakes in running stats that single-image inference never matches
        self.bn = nn.BatchNorm2d(out_ch, track_running_stats=False)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor, skip: Optional[torch.Tensor] = None) -> torch.Tensor:
        x = self.bn(self.conv(self.upsample(x)))
        if skip is not None:
            x = x * skip
        return self.relu(x)


class SaliencyModel(nn.Module):
    """Full predictor: forward(image, text_map) -> (B, H, W) map in [0, 1]."""

    def __init__(self, config: ModelConfig = ModelConfig()) -> None:
        super().__init__()
        self.config = config
        h, w = config.resolution

        self.image_backbone = ResNetTaps()
        self.image_scales = nn.ModuleList(
            ScaleEncoder(
                in_ch,
                dim,
                (h // stride, w // stride),
                config.transformer_depth,
                config.mlp_ratio,
            )
            for stride, in_ch, dim in SCALES
        )
        if config.share_encoders:
            self.text_backbone = self.image_backbone
            self.text_scales = self.image_scales
        else:
            self.text_backbone = ResNetTaps()
            self.text_scales = nn.ModuleList(
                ScaleEncoder(
                    in_ch,
                    dim,
                    (h // stride, w // stride),
                    config.transformer_depth,
                    config.mlp_ratio,
                )
                for stride, in_ch, dim in SCALES
            )

        # one blending gate per scale, sigmoid(alpha) weights the image stream
        self.alphas = nn.ParameterList(
            nn.Parameter(torch.tensor(float(config.alpha_init))) for _ in SCALES
        )

        # stride 32 -> 1 takes five doublings; the two finest fused scales
        # gate the first two stages
        self.stage_to_16 = DecoderStage(768, 768)
        self.stage_to_8 = DecoderStage(768, 512)
        self.stage_to_4 = DecoderStage(512, 256)
        self.stage_to_2 = DecoderStage(256, 128)
        self.stage_to_1 = DecoderStage(128, 64)
        self.head = nn.Conv2d(64, 1, kernel_size=3, padding=1)

    def fusion_weights(self) -> list[float]:
        """Current sigmoid(alpha) per scale, finest first."""
        return [float(torch.sigmoid(a.detach())) for a in self.alphas]

    def _check_input(self, name: str, x: torch.Tensor) -> None:
        h, w = self.config.resolution
        if x.dim() != 4 or x.shape[1] != 3:
            raise ModelError(f"{name} must be (B, 3, H, W), got {tuple(x.shape)}")
        if x.shape[2:] != (h, w):
            raise ModelError(
                f"{name} is {tuple(x.shape[2:])} but the model was built for ({h}, {w})"
            )

    def forward(self, image: torch.Tensor, text_map: torch.Tensor) -> torch.Tensor:
        self._check_input("image", image)
        self._check_input("text_map", text_map)
        if image.shape[0] != text_map.shape[0]:
            raise ModelError("image and text_map batch sizes differ")

        img_feats = self.image_backbone(image)
        txt_feats = self.text_backbone(text_map)

        fused = []
        for i, (img_f, txt_f) in enumerate(zip(img_feats, txt_feats)):
            img_tokens = self.image_scales[i](img_f)
            txt_tokens = self.text_scales[i](txt_f)
            gate = torch.sigmoid(self.alphas[i])
            fused.append(gate * img_tokens + (1.0 - gate) * txt_tokens)
        fused_8, fused_16, fused_32 = fused

        x = fused_32                                # (B, 768, H/32, W/32)
        x = self.stage_to_16(x, skip=fused_16)      # (B, 768, H/16, W/16)
        x = self.stage_to_8(x, skip=fused_8)        # (B, 512, H/8,  W/8)
        x = self.stage_to_4(x)                      # (B, 256, H/4,  W/4)
        x = self.stage_to_2(x)                      # (B, 128, H/2,  W/2)
        x = self.stage_to_1(x)                      # (B, 64,  H,    W)
        return torch.sigmoid(self.head(x)).squeeze(1)


def save_checkpoint(model: SaliencyModel, path: str | Path) -> Path:
    """Write a versioned checkpoint: config plus weights."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "config": model.config.to_dict(),
            "state_dict": model.state_dict(),
        },
        path,
    )
    return path


def load_checkpoint(path: str | Path) -> SaliencyModel:
    """Rebuild a model from a checkpoint; refuses unversioned or alien files."""
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError as exc:
        raise ModelError(f"checkpoint not found: {path}") from exc
    except Exception as exc:
        raise ModelError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise ModelError(f"checkpoint {path} has no version field")
    if payload["version"] != CHECKPOINT_VERSION:
        raise ModelError(
            f"checkpoint version {payload['version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    if "config" not in payload or "state_dict" not in payload:
        raise ModelError(f"checkpoint {path} is missing config or weights")
    model = SaliencyModel(ModelConfig.from_dict(payload["config"]))
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise ModelError(f"checkpoint weights do not fit the declared config: {exc}") from exc
    model.eval()
    return model


def _to_batch(array: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32)).permute(2, 0, 1)[None]


def predict_saliency(
    model: SaliencyModel,
    image: ImageTensor,
    text_map: Optional[np.ndarray] = None,
) -> SaliencyMap:
    """Run one image (and its text map, zeros if absent) through the model."""
    h, w = model.config.resolution
    if (image.height, image.width) != (h, w):
        raise DataError(
            f"image is {image.height}x{image.width} but the model expects {h}x{w}; "
            "load it at the model's resolution"
        )
    if text_map is None:
        text_map = np.zeros_like(image.data)
    if text_map.shape != image.data.shape:
        raise DataError(f"text map shape {text_map.shape} does not match image {image.data.shape}")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(_to_batch(image.data), _to_batch(text_map))
    finally:
        if was_training:
            model.train()
    return SaliencyMap(np.clip(out[0].numpy().astype(np.float64), 0.0, 1.0))
