"""Patch-based image encoder and token text encoder.

Both are pre-norm transformers (GELU MLP, expansion 4) that prepend a
learned class token at position 0, add learned positional embeddings, and
keep the attention-weight matrix of every layer and head from the forward
pass. The class row of the final sequence, projected and L2-normalized,
is the global embedding used by the contrastive objective.

Attention weights stay attached to the tape: the rollout-based region
selection downstream reads them as plain arrays, but gradients still flow
through their use inside each attention layer.

Desk-scale defaults live in config.RunConfig. The full-scale setting the
architecture is shrunk from is recorded here for reference only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, sqrt_d_scale
from .errors import ConfigError, InputError, TruncationWarning
from .params import ParamStore

INIT_STD = 0.02
MLP_RATIO = 4

# Reference values of the full-scale configuration this architecture is a
# shrunk version of: 224 px inputs, width 512, 12 layers, 8 heads, context 77.
FULL_SCALE_REFERENCE = {
    "image_size": 224,
    "d_model": 512,
    "n_layers": 12,
    "n_heads": 8,
    "max_context": 77,
}


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int
    patch_size: int
    d_model: int
    n_layers: int
    n_heads: int
    vocab_size: int
    max_context: int

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size "
                f"{self.patch_size}"
            )
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.max_context < 2:
            raise ConfigError("max_context must be at least 2")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid


@dataclass
class AttentionStack:
    """Per-layer, per-head attention matrices kept from one forward pass."""

    weights: list[list[Tensor]]  # [layer][head], each (N, N) row-stochastic

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_heads(self) -> int:
        return len(self.weights[0])

    @property
    def seq_len(self) -> int:
        return self.weights[0][0].shape[0]

    def as_array(self) -> np.ndarray:
        """Copy to a (layers, heads, N, N) array of the attention weights."""
        return np.array(
            [[head.data for head in layer] for layer in self.weights]
        )


@dataclass
class EncodedSequence:
    tokens: Tensor  # (N, d_model), row 0 is the class token
    class_embedding: Tensor  # (1, d_model), gathered row 0 of tokens
    global_embedding: Tensor  # (1, d_model), projected + L2-normalized class row
    attention: AttentionStack
    truncated: bool = field(default=False)


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Split a square gray image into row-major flat patches.

    Returns shape (P, patch_size**2) with P = (side/patch_size)**2; patch 0
    is the top-left patch. Pixels must land in [0, 1]; inputs on the 8-bit
    0..255 scale are divided by 255 first.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise InputError(f"expected a square 2-D image, got shape {img.shape}")
    side = img.shape[0]
    if side % patch_size != 0:
        raise ConfigError(
            f"image side {side} not divisible by patch size {patch_size}"
        )
    if not np.isfinite(img).all():
        raise InputError("image contains non-finite pixels")
    if img.max() > 1.0:
        img = img / 255.0
    if img.min() < 0.0 or img.max() > 1.0:
        raise InputError("pixel values must lie in [0, 1] (or 8-bit [0, 255])")
    g = side // patch_size
    patches = img.reshape(g, patch_size, g, patch_size).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(patches.reshape(g * g, patch_size * patch_size))


def _init_block(store: ParamStore, prefix: str, d: int, n_heads: int, rng) -> None:
    h = MLP_RATIO * d
    store.add(f"{prefix}.ln1.gain", np.ones(d))
    store.add(f"{prefix}.ln1.bias", np.zeros(d))
    for w in ("wq", "wk", "wv", "wo"):
        store.add(f"{prefix}.attn.{w}", rng.normal(0, INIT_STD, (d, d)))
    store.add(f"{prefix}.attn.bias", np.zeros(d))
    store.add(f"{prefix}.ln2.gain", np.ones(d))
    store.add(f"{prefix}.ln2.bias", np.zeros(d))
    store.add(f"{prefix}.mlp.w1", rng.normal(0, INIT_STD, (d, h)))
    store.add(f"{prefix}.mlp.b1", np.zeros(h))
    store.add(f"{prefix}.mlp.w2", rng.normal(0, INIT_STD, (h, d)))
    store.add(f"{prefix}.mlp.b2", np.zeros(d))


def init_transformer_params(
    store: ParamStore, prefix: str, d: int, n_layers: int, n_heads: int, rng
) -> None:
    """Register blocks plus the final layernorm under ``prefix``."""
    for i in range(n_layers):
        _init_block(store, f"{prefix}.block{i}", d, n_heads, rng)
    store.add(f"{prefix}.ln_f.gain", np.ones(d))
    store.add(f"{prefix}.ln_f.bias", np.zeros(d))


def transformer_block(
    tape: Tape,
    x: Tensor,
    store: ParamStore,
    prefix: str,
    n_heads: int,
    attn_sink: list[Tensor],
) -> Tensor:
    """One pre-norm block; appends each head's attention matrix to attn_sink."""
    d = x.shape[1]
    d_head = d // n_heads
    score_scale = sqrt_d_scale(d_head)

    h = tape.layernorm(x, store[f"{prefix}.ln1.gain"], store[f"{prefix}.ln1.bias"])
    q_all = tape.matmul(h, store[f"{prefix}.attn.wq"])
    k_all = tape.matmul(h, store[f"{prefix}.attn.wk"])
    v_all = tape.matmul(h, store[f"{prefix}.attn.wv"])
    contexts = []
    for k in range(n_heads):
        lo, hi = k * d_head, (k + 1) * d_head
        q = tape.col_slice(q_all, lo, hi)
        key = tape.col_slice(k_all, lo, hi)
        v = tape.col_slice(v_all, lo, hi)
        scores = tape.scale(tape.matmul(q, tape.transpose(key)), score_scale)
        attn = tape.softmax_rows(scores)
        attn_sink.append(attn)
        contexts.append(tape.matmul(attn, v))
    ctx = tape.col_concat(contexts) if len(contexts) > 1 else contexts[0]
    attn_out = tape.matmul(ctx, store[f"{prefix}.attn.wo"])
    attn_out = tape.add_rowvec(attn_out, store[f"{prefix}.attn.bias"])
    x = tape.add(x, attn_out)

    h2 = tape.layernorm(x, store[f"{prefix}.ln2.gain"], store[f"{prefix}.ln2.bias"])
    m = tape.add_rowvec(tape.matmul(h2, store[f"{prefix}.mlp.w1"]), store[f"{prefix}.mlp.b1"])
    m = tape.gelu(m)
    m = tape.add_rowvec(tape.matmul(m, store[f"{prefix}.mlp.w2"]), store[f"{prefix}.mlp.b2"])
    return tape.add(x, m)


def run_transformer(
    tape: Tape,
    seq: Tensor,
    store: ParamStore,
    prefix: str,
    n_layers: int,
    n_heads: int,
) -> tuple[Tensor, AttentionStack]:
    layers: list[list[Tensor]] = []
    for i in range(n_layers):
        sink: list[Tensor] = []
        seq = transformer_block(tape, seq, store, f"{prefix}.block{i}", n_heads, sink)
        layers.append(sink)
    seq = tape.layernorm(
        seq, store[f"{prefix}.ln_f.gain"], store[f"{prefix}.ln_f.bias"]
    )
    return seq, AttentionStack(layers)


def _readout(tape: Tape, seq: Tensor, attention: AttentionStack, proj: Tensor,
             truncated: bool = False) -> EncodedSequence:
    cls_row = tape.row_gather(seq, [0])
    global_emb = tape.l2_normalize_rows(tape.matmul(cls_row, proj))
    return EncodedSequence(
        tokens=seq,
        class_embedding=cls_row,
        global_embedding=global_emb,
        attention=attention,
        truncated=truncated,
    )


class ImageEncoder:
    """ViT-style encoder over flat patches with a learned class token."""

    def __init__(self, cfg: EncoderConfig, store: ParamStore, rng, prefix: str = "image"):
        self.cfg = cfg
        self.store = store
        self.prefix = prefix
        d = cfg.d_model
        p2 = cfg.patch_size * cfg.patch_size
        store.add(f"{prefix}.patch_embed.w", rng.normal(0, INIT_STD, (p2, d)))
        store.add(f"{prefix}.patch_embed.b", np.zeros(d))
        store.add(f"{prefix}.cls", rng.normal(0, INIT_STD, (1, d)))
        store.add(f"{prefix}.pos", rng.normal(0, INIT_STD, (cfg.n_patches + 1, d)))
        init_transformer_params(store, prefix, d, cfg.n_layers, cfg.n_heads, rng)
        store.add(f"{prefix}.proj", rng.normal(0, INIT_STD, (d, d)))

    def embed_patches(self, tape: Tape, image: np.ndarray) -> Tensor:
        """Patch embeddings before the class token and positional addition."""
        patches = patchify(image, self.cfg.patch_size)
        if patches.shape[0] != self.cfg.n_patches:
            raise InputError(
                f"image yields {patches.shape[0]} patches, config expects "
                f"{self.cfg.n_patches}"
            )
        x = tape.matmul(tape.const(patches), self.store[f"{self.prefix}.patch_embed.w"])
        return tape.add_rowvec(x, self.store[f"{self.prefix}.patch_embed.b"])

    def encode(self, tape: Tape, image: np.ndarray) -> EncodedSequence:
        x = self.embed_patches(tape, image)
        seq = tape.row_concat([self.store[f"{self.prefix}.cls"], x])
        seq = tape.add(seq, self.store[f"{self.prefix}.pos"])
        seq, attention = run_transformer(
            tape, seq, self.store, self.prefix, self.cfg.n_layers, self.cfg.n_heads
        )
        return _readout(tape, seq, attention, self.store[f"{self.prefix}.proj"])


class TextEncoder:
    """Bidirectional (non-causal) transformer over token embeddings."""

    def __init__(self, cfg: EncoderConfig, store: ParamStore, rng, prefix: str = "text"):
        self.cfg = cfg
        self.store = store
        self.prefix = prefix
        d = cfg.d_model
        store.add(f"{prefix}.tok_embed", rng.normal(0, INIT_STD, (cfg.vocab_size, d)))
        store.add(f"{prefix}.cls", rng.normal(0, INIT_STD, (1, d)))
        store.add(f"{prefix}.pos", rng.normal(0, INIT_STD, (cfg.max_context, d)))
        init_transformer_params(store, prefix, d, cfg.n_layers, cfg.n_heads, rng)
        store.add(f"{prefix}.proj", rng.normal(0, INIT_STD, (d, d)))

    def encode(self, tape: Tape, token_ids) -> EncodedSequence:
        ids = [int(i) for i in token_ids]
        if not ids:
            raise InputError("text encoder needs at least one token")
        if any(i < 0 or i >= self.cfg.vocab_size for i in ids):
            bad = [i for i in ids if i < 0 or i >= self.cfg.vocab_size]
            raise InputError(f"token ids {bad} outside vocabulary of size "
                             f"{self.cfg.vocab_size}")
        truncated = False
        limit = self.cfg.max_context - 1
        if len(ids) > limit:
            warnings.warn(
                f"token sequence of length {len(ids)} truncated to {limit}",
                TruncationWarning,
                stacklevel=2,
            )
            ids = ids[:limit]
            truncated = True
        x = tape.row_gather(self.store[f"{self.prefix}.tok_embed"], ids)
        seq = tape.row_concat([self.store[f"{self.prefix}.cls"], x])
        pos = tape.row_gather(self.store[f"{self.prefix}.pos"], list(range(len(ids) + 1)))
        seq = tape.add(seq, pos)
        seq, attention = run_transformer(
            tape, seq, self.store, self.prefix, self.cfg.n_layers, self.cfg.n_heads
        )
        return _readout(
            tape, seq, attention, self.store[f"{self.prefix}.proj"], truncated
        )
