"""Cross-modal fusion tests: readout contracts, interpretability scores."""

import numpy as np
import pytest

from regionclr.autodiff import Tape, Tensor
from regionclr.crossmodal import (
    CrossModalFusion,
    CrossModalInput,
    rank_regions,
    renormalized_region_scores,
    LocalEmbeddings,
)
from regionclr.errors import ContractError, EmptyRegionWarning
from regionclr.params import ParamStore
from regionclr.regions import RegionSelection


D = 8


def make_fusion(seed=0, n_layers=1, n_heads=2):
    store = ParamStore()
    rng = np.random.default_rng(seed)
    return CrossModalFusion(D, n_layers, n_heads, store, rng), store


def rows(n, seed):
    return Tensor(np.random.default_rng(seed).normal(size=(n, D)))


class TestFuse:
    def test_local_embeddings_unit_norm(self):
        fusion, _ = make_fusion()
        out = fusion.fuse(
            Tape(), CrossModalInput.build(rows(4, 1), rows(3, 2))
        )
        assert abs(np.linalg.norm(out.local_image.data) - 1.0) < 1e-9
        assert abs(np.linalg.norm(out.local_text.data) - 1.0) < 1e-9

    def test_interp_attention_shape_and_sign(self):
        fusion, _ = make_fusion()
        out = fusion.fuse(Tape(), CrossModalInput.build(rows(4, 3), rows(5, 4)))
        assert out.interp_attention.shape == (5, 3)  # text rows x regions
        assert (out.interp_attention >= 0).all()

    def test_renormalized_scores_sum_to_one(self):
        fusion, _ = make_fusion()
        out = fusion.fuse(Tape(), CrossModalInput.build(rows(4, 5), rows(3, 6)))
        assert abs(renormalized_region_scores(out).sum() - 1.0) < 1e-9

    def test_deterministic(self):
        fusion, _ = make_fusion(seed=9)
        a = fusion.fuse(Tape(), CrossModalInput.build(rows(3, 7), rows(3, 8)))
        b = fusion.fuse(Tape(), CrossModalInput.build(rows(3, 7), rows(3, 8)))
        np.testing.assert_array_equal(a.local_image.data, b.local_image.data)
        np.testing.assert_array_equal(a.interp_attention, b.interp_attention)

    def test_empty_region_set_flagged(self):
        fusion, _ = make_fusion()
        with pytest.warns(EmptyRegionWarning):
            out = fusion.fuse(Tape(), CrossModalInput.build(rows(1, 10), rows(3, 11)))
        assert out.interp_attention.shape == (3, 0)

    def test_region_swap_permutes_interp_columns(self):
        # permutation oracle: rerun fuse on swapped region rows and compare
        fusion, _ = make_fusion(seed=13)
        img = np.random.default_rng(14).normal(size=(4, D))
        txt = rows(3, 15)
        base = fusion.fuse(Tape(), CrossModalInput.build(Tensor(img), txt))

        swapped = img.copy()
        swapped[[1, 3]] = swapped[[3, 1]]
        perm = fusion.fuse(Tape(), CrossModalInput.build(Tensor(swapped), txt))

        np.testing.assert_allclose(
            perm.interp_attention[:, [2, 1, 0]], base.interp_attention, atol=1e-12
        )

    def test_mismatched_widths_rejected(self):
        with pytest.raises(ContractError):
            CrossModalInput.build(
                Tensor(np.zeros((2, D))), Tensor(np.zeros((2, D + 1)))
            )


class TestRankRegions:
    def fake_emb(self, scores):
        scores = np.asarray(scores, dtype=float)
        return LocalEmbeddings(
            local_image=Tensor(np.zeros((1, D))),
            local_text=Tensor(np.zeros((1, D))),
            interp_attention=scores[None, :],
        )

    def selection(self, patches):
        return RegionSelection(
            head_argmax=list(patches),
            selected=list(patches),
            scores=np.zeros((len(patches), 1)),
        )

    def test_singleton_scores_one(self):
        ranked = rank_regions(self.fake_emb([0.37]), self.selection([5]))
        assert ranked == [(5, 1.0)]

    def test_descending_score_order(self):
        ranked = rank_regions(
            self.fake_emb([0.2, 0.5, 0.3]), self.selection([4, 9, 2])
        )
        assert [p for p, _ in ranked] == [9, 2, 4]

    def test_ties_break_by_patch_index(self):
        ranked = rank_regions(
            self.fake_emb([0.25, 0.25, 0.25, 0.25]), self.selection([7, 3, 11, 1])
        )
        assert [p for p, _ in ranked] == [1, 3, 7, 11]

    def test_selection_size_mismatch_rejected(self):
        with pytest.raises(ContractError):
            rank_regions(self.fake_emb([0.5, 0.5]), self.selection([1]))
