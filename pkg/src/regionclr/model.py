"""The assembled model: encoders, region selection, and fusion over one
parameter store."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .config import RunConfig
from .crossmodal import CrossModalFusion, CrossModalInput, LocalEmbeddings
from .encoders import EncodedSequence, ImageEncoder, TextEncoder
from .objectives import BatchEmbeddings
from .params import ParamStore
from .regions import (
    RegionSelection,
    RolloutResult,
    reduce_sequence,
    rollout,
    select_regions,
)


@dataclass
class PairEncoding:
    """Everything one image/text pair produces in a forward pass."""

    image_seq: EncodedSequence
    text_seq: EncodedSequence
    rollout_result: RolloutResult
    selection: RegionSelection
    local: LocalEmbeddings


class Model:
    """Image encoder + text encoder + rollout selection + cross-modal fusion."""

    def __init__(self, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        self.params = ParamStore()
        rng = np.random.default_rng([cfg.seed, 1])
        self.image_encoder = ImageEncoder(cfg.image_encoder_config(), self.params, rng)
        self.text_encoder = TextEncoder(cfg.text_encoder_config(), self.params, rng)
        self.fusion = CrossModalFusion(
            cfg.image_d_model, cfg.fusion_layers, cfg.fusion_heads, self.params, rng
        )

    def encode_image(self, tape: Tape, image: np.ndarray) -> EncodedSequence:
        return self.image_encoder.encode(tape, image)

    def encode_text(self, tape: Tape, tokens) -> EncodedSequence:
        return self.text_encoder.encode(tape, tokens)

    def select(self, encoded: EncodedSequence) -> tuple[RolloutResult, RegionSelection]:
        result = rollout(encoded.attention, residual=self.cfg.residual_rollout)
        selection = select_regions(result, keep_duplicates=self.cfg.keep_duplicates)
        return result, selection

    def encode_pair(self, tape: Tape, image: np.ndarray, tokens) -> PairEncoding:
        image_seq = self.encode_image(tape, image)
        text_seq = self.encode_text(tape, tokens)
        rollout_result, selection = self.select(image_seq)
        reduced = reduce_sequence(tape, image_seq, selection)
        local = self.fusion.fuse(
            tape, CrossModalInput.build(reduced, text_seq.tokens)
        )
        return PairEncoding(
            image_seq=image_seq,
            text_seq=text_seq,
            rollout_result=rollout_result,
            selection=selection,
            local=local,
        )

    def embed_batch(self, tape: Tape, pairs) -> tuple[BatchEmbeddings, list[PairEncoding]]:
        """Encode each (image, tokens) pair independently and stack the
        per-pair embeddings into (N, d) blocks; cross-pair interaction
        happens only inside the loss."""
        encodings = [self.encode_pair(tape, p.image, p.tokens) for p in pairs]
        batch = BatchEmbeddings(
            global_image=tape.row_concat(
                [e.image_seq.global_embedding for e in encodings]
            ),
            global_text=tape.row_concat(
                [e.text_seq.global_embedding for e in encodings]
            ),
            local_image=tape.row_concat([e.local.local_image for e in encodings]),
            local_text=tape.row_concat([e.local.local_text for e in encodings]),
            temperature_global=self.cfg.temperature_global,
            temperature_local=self.cfg.temperature_local,
            local_weight=self.cfg.local_loss_weight,
        )
        return batch, encodings
