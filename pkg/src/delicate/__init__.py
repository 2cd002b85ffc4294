"""Compact chemical transformers: a numpy BERT encoder for SMILES with
cross-layer parameter sharing, MaskedLM + PhysChemPred pretraining, triple-loss
general distillation into a shallower student, and QSAR / virtual-screening
evaluation."""

from .model import ModelConfig, ParamStore, encode, init_params, param_count
from .pretrain import pretrain_run
from .distill import DistillConfig, distill_run
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "DistillConfig", "ModelConfig", "ParamStore", "distill_run", "encode", "init_params",
    "load_checkpoint", "param_count", "pretrain_run", "save_checkpoint",
]
