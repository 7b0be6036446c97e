"""Encoder tests: patch layout, normalization contracts, determinism, gradients."""

import numpy as np
import pytest

from regionclr.autodiff import Tape, Tensor, gradcheck
from regionclr.encoders import (
    EncoderConfig,
    ImageEncoder,
    TextEncoder,
    patchify,
)
from regionclr.errors import ConfigError, InputError, TruncationWarning
from regionclr.params import ParamStore


def tiny_cfg(**overrides):
    base = dict(
        image_size=8,
        patch_size=4,
        d_model=8,
        n_layers=2,
        n_heads=2,
        vocab_size=8,
        max_context=6,
    )
    base.update(overrides)
    return EncoderConfig(**base)


def build_encoders(seed=0, **overrides):
    cfg = tiny_cfg(**overrides)
    store = ParamStore()
    rng = np.random.default_rng(seed)
    return cfg, store, ImageEncoder(cfg, store, rng), TextEncoder(cfg, store, rng)


class TestPatchify:
    def test_2x2_layout(self):
        img = np.arange(16, dtype=float).reshape(4, 4) / 16.0
        patches = patchify(img, 2)
        assert patches.shape == (4, 4)
        # patch 0 is the top-left 2x2 block, row-major within the patch
        np.testing.assert_array_equal(patches[0], img[:2, :2].reshape(-1))
        np.testing.assert_array_equal(patches[1], img[:2, 2:].reshape(-1))
        np.testing.assert_array_equal(patches[2], img[2:, :2].reshape(-1))

    def test_whole_image_patch(self):
        img = np.full((2, 2), 0.5)
        patches = patchify(img, 2)
        assert patches.shape == (1, 4)
        np.testing.assert_array_equal(patches[0], img.reshape(-1))

    def test_patch_count_oracle(self):
        # count oracle: (image_size / patch_size) ** 2
        img = np.zeros((32, 32))
        assert patchify(img, 8).shape == (16, 64)

    def test_non_divisible_size_rejected(self):
        with pytest.raises(ConfigError):
            patchify(np.zeros((10, 10)), 4)

    def test_eight_bit_inputs_rescaled(self):
        img = np.full((2, 2), 255.0)
        np.testing.assert_allclose(patchify(img, 2), np.ones((1, 4)))


class TestEncoderConfig:
    def test_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            tiny_cfg(image_size=10)
        with pytest.raises(ConfigError):
            tiny_cfg(d_model=9)

    def test_derived_sizes(self):
        cfg = tiny_cfg()
        assert cfg.d_head == 4
        assert cfg.n_patches == 4


class TestEncodeContracts:
    def test_global_embedding_unit_norm(self):
        _, _, img_enc, txt_enc = build_encoders()
        tape = Tape()
        enc = img_enc.encode(tape, np.random.default_rng(1).random((8, 8)))
        assert abs(np.linalg.norm(enc.global_embedding.data) - 1.0) < 1e-9
        enc_t = txt_enc.encode(tape, [1, 2, 3])
        assert abs(np.linalg.norm(enc_t.global_embedding.data) - 1.0) < 1e-9

    def test_class_embedding_is_row_zero(self):
        _, _, img_enc, _ = build_encoders()
        tape = Tape()
        enc = img_enc.encode(tape, np.random.default_rng(2).random((8, 8)))
        np.testing.assert_array_equal(enc.class_embedding.data[0], enc.tokens.data[0])

    def test_deterministic(self):
        img = np.random.default_rng(3).random((8, 8))
        _, _, img_enc, txt_enc = build_encoders(seed=7)
        a = img_enc.encode(Tape(), img)
        b = img_enc.encode(Tape(), img)
        np.testing.assert_array_equal(a.tokens.data, b.tokens.data)
        ta = txt_enc.encode(Tape(), [4, 5])
        tb = txt_enc.encode(Tape(), [4, 5])
        np.testing.assert_array_equal(ta.global_embedding.data, tb.global_embedding.data)

    def test_attention_rows_stochastic(self):
        _, _, img_enc, txt_enc = build_encoders()
        for enc in (
            img_enc.encode(Tape(), np.random.default_rng(4).random((8, 8))),
            txt_enc.encode(Tape(), [0, 1, 2, 3]),
        ):
            stack = enc.attention.as_array()
            np.testing.assert_allclose(stack.sum(axis=-1), 1.0, atol=1e-9)
            assert (stack >= 0).all() and (stack <= 1).all()

    def test_attention_shape_matches_sequence(self):
        _, _, img_enc, _ = build_encoders()
        enc = img_enc.encode(Tape(), np.zeros((8, 8)))
        assert enc.attention.seq_len == enc.tokens.shape[0] == 5  # 4 patches + class


class TestTextInputHandling:
    def test_overlength_truncates_with_flag(self):
        _, _, _, txt_enc = build_encoders()
        with pytest.warns(TruncationWarning):
            enc = txt_enc.encode(Tape(), [1] * 10)
        assert enc.truncated
        assert enc.tokens.shape[0] == 6  # max_context - 1 tokens + class

    def test_unknown_id_rejected(self):
        _, _, _, txt_enc = build_encoders()
        with pytest.raises(InputError):
            txt_enc.encode(Tape(), [0, 99])

    def test_empty_sequence_rejected(self):
        _, _, _, txt_enc = build_encoders()
        with pytest.raises(InputError):
            txt_enc.encode(Tape(), [])


def test_patch_permutation_permutes_embeddings():
    # positional embeddings are the only position-dependent term, so swapping
    # two patches of the input swaps the pre-positional patch embeddings
    _, _, img_enc, _ = build_encoders(seed=11)
    rng = np.random.default_rng(12)
    img = rng.random((8, 8))
    swapped = img.copy()
    # patches 0 and 3 of the 2x2 grid are the top-left / bottom-right quadrants
    swapped[:4, :4], swapped[4:, 4:] = img[4:, 4:].copy(), img[:4, :4].copy()

    base = img_enc.embed_patches(Tape(), img).data
    perm = img_enc.embed_patches(Tape(), swapped).data
    np.testing.assert_allclose(perm[0], base[3], atol=1e-12)
    np.testing.assert_allclose(perm[3], base[0], atol=1e-12)
    np.testing.assert_allclose(perm[1], base[1], atol=1e-12)


def test_full_encoder_gradcheck():
    # d_model 8, 2 layers, 2 heads; scalar readout through the global embedding
    _, store, img_enc, _ = build_encoders(seed=5)
    img = np.random.default_rng(6).random((8, 8))
    probe = np.random.default_rng(7).normal(size=(8, 1))

    def f(tape):
        enc = img_enc.encode(tape, img)
        return tape.sum(tape.matmul(enc.global_embedding, tape.const(probe)))

    leaves = [store[n] for n in store.names() if n.startswith("image.block0.attn")]
    leaves += [store["image.patch_embed.w"], store["image.cls"], store["image.proj"]]
    assert gradcheck(f, leaves, eps=1e-5) < 1e-4
