"""Contrastive image-text training with attention-rollout region selection.

A small, fully self-contained stack: float64 tape autodiff, a patch-based
image encoder and token text encoder, per-head attention rollout for region
selection, a cross-modal fusion transformer, a combined global+local
contrastive objective, a synthetic planted-finding corpus, zero-shot
evaluation metrics, and a CLI for the whole pipeline.
"""

from .autodiff import Tape, Tensor, gradcheck
from .backend import active_backend

__version__ = "0.1.0"

__all__ = ["Tape", "Tensor", "gradcheck", "active_backend", "__version__"]
