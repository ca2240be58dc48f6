"""Unsupervised image-to-image translation: conditional generator training,
checkpointing, and pluggable translation backends."""

from .backends import (
    BACKEND_REGISTRY,
    CondCycleBackend,
    TranslationModel,
    TwinCycleBackend,
    get_backend,
    load_checkpoint_payload,
    register_backend,
)
from .nets import ConditionalGenerator, Critic, PlainGenerator, ResidualBlock
from .training import (
    compute_losses,
    list_checkpoints,
    load_translator,
    train_ui2i,
    translate,
)
from .types import (
    CheckpointRecord,
    DomainCode,
    LossWeights,
    UI2IConfig,
    checkpoint_filename,
    plan_checkpoints,
)

__all__ = [
    "BACKEND_REGISTRY",
    "CheckpointRecord",
    "CondCycleBackend",
    "ConditionalGenerator",
    "Critic",
    "DomainCode",
    "LossWeights",
    "PlainGenerator",
    "ResidualBlock",
    "TranslationModel",
    "TwinCycleBackend",
    "UI2IConfig",
    "checkpoint_filename",
    "compute_losses",
    "get_backend",
    "list_checkpoints",
    "load_checkpoint_payload",
    "load_translator",
    "plan_checkpoints",
    "register_backend",
    "train_ui2i",
    "translate",
]
