"""Cross-modal fusion transformer over selected image regions and text tokens.

The reduced image sequence (image class token plus selected patch rows) and
the full text sequence (text class token plus token rows) are concatenated
into one sequence, tagged with learned modality-type embeddings, and run
through a small transformer with full self-attention. The image-class and
text-class positions, projected and L2-normalized, become the local
embeddings for the local contrastive loss.

No fresh positional encoding is added: region rows carry their original
image positions and text rows theirs.

For interpretability, the attention weights from text rows to region
columns are averaged over layers and heads. Scores are read off the
text-class row (the prompt-level summary); they order regions but are not
claimed to be a complete explanation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .encoders import init_transformer_params, run_transformer
from .errors import ContractError, EmptyRegionWarning
from .params import ParamStore
from .regions import RegionSelection

IMAGE_TAG = 0
TEXT_TAG = 1


@dataclass
class CrossModalInput:
    image_rows: Tensor  # (1 + regions, d): image class token then regions
    text_rows: Tensor  # (1 + tokens, d): text class token then tokens
    modality_tags: list[int]

    @classmethod
    def build(cls, image_rows: Tensor, text_rows: Tensor) -> "CrossModalInput":
        if image_rows.shape[0] < 1 or text_rows.shape[0] < 1:
            raise ContractError("both modalities need at least their class row")
        if image_rows.shape[1] != text_rows.shape[1]:
            raise ContractError(
                f"modality widths differ: {image_rows.shape[1]} vs "
                f"{text_rows.shape[1]}"
            )
        tags = [IMAGE_TAG] * image_rows.shape[0] + [TEXT_TAG] * text_rows.shape[0]
        return cls(image_rows=image_rows, text_rows=text_rows, modality_tags=tags)

    @property
    def n_image_rows(self) -> int:
        return self.image_rows.shape[0]

    @property
    def n_regions(self) -> int:
        return self.image_rows.shape[0] - 1


@dataclass
class LocalEmbeddings:
    local_image: Tensor  # (1, d), unit norm
    local_text: Tensor  # (1, d), unit norm
    # (text rows, regions): attention from each text row to each region
    # column, averaged over fusion layers and heads
    interp_attention: np.ndarray


class CrossModalFusion:
    def __init__(
        self,
        d_model: int,
        n_layers: int,
        n_heads: int,
        store: ParamStore,
        rng,
        prefix: str = "fusion",
    ):
        if d_model % n_heads != 0:
            raise ContractError("fusion d_model must divide by its head count")
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.store = store
        self.prefix = prefix
        store.add(f"{prefix}.type_embed", rng.normal(0, 0.02, (2, d_model)))
        init_transformer_params(store, prefix, d_model, n_layers, n_heads, rng)
        store.add(f"{prefix}.img_proj", rng.normal(0, 0.02, (d_model, d_model)))
        store.add(f"{prefix}.txt_proj", rng.normal(0, 0.02, (d_model, d_model)))

    def fuse(self, tape: Tape, xm_input: CrossModalInput) -> LocalEmbeddings:
        n_img = xm_input.n_image_rows
        n_regions = xm_input.n_regions
        if n_regions == 0:
            warnings.warn(
                "fusing with no selected regions; class token only",
                EmptyRegionWarning,
                stacklevel=2,
            )
        seq = tape.row_concat([xm_input.image_rows, xm_input.text_rows])
        types = tape.row_gather(
            self.store[f"{self.prefix}.type_embed"], xm_input.modality_tags
        )
        seq = tape.add(seq, types)
        seq, attention = run_transformer(
            tape, seq, self.store, self.prefix, self.n_layers, self.n_heads
        )
        img_cls = tape.row_gather(seq, [0])
        txt_cls = tape.row_gather(seq, [n_img])
        local_image = tape.l2_normalize_rows(
            tape.matmul(img_cls, self.store[f"{self.prefix}.img_proj"])
        )
        local_text = tape.l2_normalize_rows(
            tape.matmul(txt_cls, self.store[f"{self.prefix}.txt_proj"])
        )

        # detached: interpretability scores never carry gradient
        stack = attention.as_array()
        interp = stack[:, :, n_img:, 1:n_img].mean(axis=(0, 1))
        return LocalEmbeddings(
            local_image=local_image,
            local_text=local_text,
            interp_attention=interp,
        )


def renormalized_region_scores(emb: LocalEmbeddings) -> np.ndarray:
    """Text-class-row attention over regions, rescaled to sum to 1."""
    row = emb.interp_attention[0]
    total = row.sum()
    if row.size == 0:
        return row.copy()
    if total <= 0.0:
        return np.full(row.shape, 1.0 / row.size)
    return row / total


def rank_regions(
    emb: LocalEmbeddings, selection: RegionSelection
) -> list[tuple[int, float]]:
    """Order selected patches by descending text-class attention.

    Ties break toward the lower patch index. Scores are renormalized over
    the region columns, so a single region scores exactly 1.
    """
    scores = renormalized_region_scores(emb)
    if len(selection.selected) != scores.size:
        raise ContractError(
            f"selection has {len(selection.selected)} regions but fusion saw "
            f"{scores.size}"
        )
    pairs = [(patch, float(s)) for patch, s in zip(selection.selected, scores)]
    return sorted(pairs, key=lambda ps: (-ps[1], ps[0]))
