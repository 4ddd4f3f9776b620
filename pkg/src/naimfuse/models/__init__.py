from .base import Module
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .mlp import CLINICAL_HIDDEN, IMAGING_HIDDEN, MlpConfig, MlpModel, mlp_forward
from .naim import ConfigError, NaimBatch, NaimConfig, NaimModel, build_mask, masked_self_attention

__all__ = [
    "CLINICAL_HIDDEN", "IMAGING_HIDDEN", "CheckpointError", "ConfigError", "MlpConfig", "MlpModel", "Module",
    "NaimBatch", "NaimConfig", "NaimModel", "build_mask", "load_checkpoint", "masked_self_attention",
    "mlp_forward", "save_checkpoint",
]
