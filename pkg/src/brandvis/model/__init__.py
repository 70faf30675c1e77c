from .attention import (
    EfficientAttention,
    EncoderLayer,
    TransformerEncoder,
    efficient_attention,
)
from .network import (
    CHECKPOINT_VERSION,
    ModelConfig,
    SaliencyModel,
    load_checkpoint,
    predict_saliency,
    save_checkpoint,
)

__all__ = [
    "CHECKPOINT_VERSION",
    "EfficientAttention",
    "EncoderLayer",
    "ModelConfig",
    "SaliencyModel",
    "TransformerEncoder",
    "efficient_attention",
    "load_checkpoint",
    "predict_saliency",
    "save_checkpoint",
]
