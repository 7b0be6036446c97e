"""Global and local contrastive losses and their weighted combination.

Both losses act on L2-normalized embeddings, so the similarity is cosine
divided by a temperature. The local loss is single-direction (each image
queries all texts) and sums over the batch; the global loss is the
symmetric variant, the mean of the image-to-text and text-to-image
cross-entropies, again summed over the batch. The combined objective is

    total = global + local_weight * local

with local_weight = 0.5 by default. Row softmax terms are evaluated through
a max-shifted log-sum-exp, so the losses stay finite for similarity
magnitudes up to 1/temperature even at temperature 0.01.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ConfigError, ContractError

UNIT_NORM_TOL = 1e-9


@dataclass
class BatchEmbeddings:
    """Per-pair global and local embeddings, stacked to (N, d) blocks."""

    global_image: Tensor
    global_text: Tensor
    local_image: Tensor
    local_text: Tensor
    temperature_global: float = 0.07
    temperature_local: float = 1.0
    local_weight: float = 0.5

    def __post_init__(self):
        shapes = {
            t.shape
            for t in (
                self.global_image,
                self.global_text,
                self.local_image,
                self.local_text,
            )
        }
        if len(shapes) != 1:
            raise ContractError(f"embedding blocks disagree in shape: {shapes}")
        if self.temperature_global <= 0 or self.temperature_local <= 0:
            raise ConfigError("temperatures must be positive")
        if self.local_weight < 0:
            raise ConfigError("local loss weight must be non-negative")
        for name in ("global_image", "global_text", "local_image", "local_text"):
            data = getattr(self, name).data
            norms = np.sqrt((data * data).sum(axis=1))
            if np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
                raise ContractError(f"{name} rows are not unit-norm")

    @property
    def n_pairs(self) -> int:
        return self.global_image.shape[0]


def similarity_matrix(tape: Tape, a: Tensor, b: Tensor, temperature: float) -> Tensor:
    """S[i, k] = (a_i . b_k) / temperature on unit-norm rows."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    return tape.scale(tape.matmul(a, tape.transpose(b)), 1.0 / temperature)


def _row_cross_entropy_sum(tape: Tape, sims: Tensor) -> Tensor:
    """Sum over rows of -log softmax(row)[diagonal]."""
    n = sims.shape[0]
    lse = tape.sum(tape.logsumexp_rows(sims))
    diag = tape.sum(tape.mul(sims, tape.const(np.eye(n))))
    return tape.add(lse, tape.scale(diag, -1.0))


def local_contrastive(
    tape: Tape,
    local_image: Tensor,
    local_text: Tensor,
    temperature: float = 1.0,
    symmetric: bool = False,
) -> Tensor:
    """One-direction contrastive loss: image i against all texts, summed.

    ``symmetric=True`` switches to the averaged two-direction variant for
    ablation; the default matches the one-direction definition exactly.
    """
    sims = similarity_matrix(tape, local_image, local_text, temperature)
    if not symmetric:
        return _row_cross_entropy_sum(tape, sims)
    fwd = _row_cross_entropy_sum(tape, sims)
    bwd = _row_cross_entropy_sum(tape, tape.transpose(sims))
    return tape.scale(tape.add(fwd, bwd), 0.5)


def global_contrastive(
    tape: Tape, global_image: Tensor, global_text: Tensor, temperature: float = 0.07
) -> Tensor:
    """Symmetric batch cross-entropy over the global similarity matrix."""
    sims = similarity_matrix(tape, global_image, global_text, temperature)
    i2t = _row_cross_entropy_sum(tape, sims)
    t2i = _row_cross_entropy_sum(tape, tape.transpose(sims))
    return tape.scale(tape.add(i2t, t2i), 0.5)


def combine(tape: Tape, global_loss: Tensor, local_loss: Tensor, local_weight: float) -> Tensor:
    return tape.add(global_loss, tape.scale(local_loss, local_weight))


def combined_loss(tape: Tape, batch: BatchEmbeddings, symmetric_local: bool = False) -> Tensor:
    g = global_contrastive(
        tape, batch.global_image, batch.global_text, batch.temperature_global
    )
    l = local_contrastive(
        tape,
        batch.local_image,
        batch.local_text,
        batch.temperature_local,
        symmetric=symmetric_local,
    )
    return combine(tape, g, l, batch.local_weight)
