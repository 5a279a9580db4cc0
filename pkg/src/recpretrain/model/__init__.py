"""Compact trainable sequential recommender: frozen text embedder, causal
self-attention collaborative encoder, trainable adapter head, checkpoints,
and the CPT/SFT training loops."""

from .checkpoint import Checkpoint, CheckpointError, inspect, restore_into
from .network import ModelDims
from .recommender import Recommender, TrainingDiverged
from .text import TextEmbedder
from .training import (
    CptResult,
    SftResult,
    cpt_run,
    pretrain_collab,
    sft_run,
)

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "CptResult",
    "ModelDims",
    "Recommender",
    "SftResult",
    "TextEmbedder",
    "TrainingDiverged",
    "cpt_run",
    "inspect",
    "pretrain_collab",
    "restore_into",
    "sft_run",
]
