"""Attention blocks: hand-computed values, reductions, and pooling lemmas."""

import math

import numpy as np
import pytest

from stfm import blocks as B
from stfm import tensor as T
from stfm.rng import Rng
from stfm.tensor import Parameter, ShapeError, Tensor

SEED = 7
LEMMA_TOL = 1e-12


def softmax_np(s):
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class TestAtt:
    def test_hand_computed_two_keys(self):
        # Scores come out as [10, 0]; the weights follow from the softmax
        # definition directly, not from the library.
        q = Tensor([[10.0, 0.0]])
        k = Tensor([[1.0, 0.0], [0.0, 1.0]])
        v = Tensor([[1.0, 2.0], [3.0, 4.0]])
        w1 = 1.0 / (1.0 + math.exp(-10.0))
        expected = [[w1 * 1.0 + (1 - w1) * 3.0, w1 * 2.0 + (1 - w1) * 4.0]]
        np.testing.assert_allclose(B.att(q, k, v, 1.0).data, expected, rtol=1e-14)

    def test_scale_divides_scores(self):
        rng = Rng(SEED)
        q = Tensor(rng.normal(0.0, 1.0, size=(3, 4)))
        k = Tensor(rng.normal(0.0, 1.0, size=(5, 4)))
        v = Tensor(rng.normal(0.0, 1.0, size=(5, 4)))
        manual = softmax_np(q.data @ k.data.T / 2.0) @ v.data
        np.testing.assert_allclose(B.att(q, k, v, 2.0).data, manual, rtol=1e-13)

    def test_zero_values_give_zero_output(self):
        rng = Rng(SEED)
        q = Tensor(rng.normal(0.0, 1.0, size=(2, 4)))
        k = Tensor(rng.normal(0.0, 1.0, size=(6, 4)))
        out = B.att(q, k, Tensor(np.zeros((6, 4))), 2.0)
        assert np.array_equal(out.data, np.zeros((2, 4)))

    def test_incompatible_shapes_raise(self):
        q = Tensor(np.ones((2, 3)))
        with pytest.raises(ShapeError):
            B.att(q, Tensor(np.ones((4, 5))), Tensor(np.ones((4, 5))), 1.0)
        with pytest.raises(ShapeError):
            B.att(q, Tensor(np.ones((4, 3))), Tensor(np.ones((5, 3))), 1.0)

    def test_unknown_weight_activation_rejected(self):
        x = Tensor(np.ones((2, 2)))
        with pytest.raises(ValueError):
            B.att(x, x, x, 1.0, weights="sigmoid")


class TestMultihead:
    def test_single_head_reduces_to_projected_att(self):
        rng = Rng(SEED)
        d = 4
        p = B.MultiheadParams.create("mh", d, 1, rng)
        q = Tensor(rng.normal(0.0, 1.0, size=(3, d)))
        kv = Tensor(rng.normal(0.0, 1.0, size=(5, d)))
        manual = (softmax_np((q.data @ p.wq[0].data)
                             @ (kv.data @ p.wk[0].data).T / math.sqrt(d))
                  @ (kv.data @ p.wv[0].data)) @ p.wo.data
        out = B.multihead(q, kv, kv, p, math.sqrt(d))
        np.testing.assert_allclose(out.data, manual, rtol=1e-13)

    def test_heads_partition_the_output_projection(self):
        # With wo = identity, the multihead output is the concatenation of the
        # per-head attention outputs.
        rng = Rng(SEED)
        d, h = 6, 3
        p = B.MultiheadParams.create("mh", d, h, rng)
        p.wo.data = np.eye(d)
        q = Tensor(rng.normal(0.0, 1.0, size=(2, d)))
        kv = Tensor(rng.normal(0.0, 1.0, size=(4, d)))
        cols = []
        for j in range(h):
            cols.append(softmax_np((q.data @ p.wq[j].data)
                                   @ (kv.data @ p.wk[j].data).T / math.sqrt(d))
                        @ (kv.data @ p.wv[j].data))
        np.testing.assert_allclose(B.multihead(q, kv, kv, p, math.sqrt(d)).data,
                                   np.hstack(cols), rtol=1e-13)

    def test_head_count_must_divide_dim(self):
        with pytest.raises(ValueError):
            B.MultiheadParams.create("mh", 6, 4, Rng(SEED))


class TestMabSabIsab:
    def test_mab_is_row_equivariant_in_x(self):
        rng = Rng(SEED)
        p = B.MABParams.create("mab", 8, 2, rng)
        x = Tensor(rng.normal(0.0, 1.0, size=(5, 8)))
        y = Tensor(rng.normal(0.0, 1.0, size=(7, 8)))
        base = B.mab(x, y, p).data
        perm = rng.permutation(5)
        np.testing.assert_allclose(B.mab(Tensor(x.data[perm]), y, p).data,
                                   base[perm], rtol=1e-12)

    def test_mab_is_invariant_to_y_order(self):
        rng = Rng(SEED)
        p = B.MABParams.create("mab", 8, 2, rng)
        x = Tensor(rng.normal(0.0, 1.0, size=(5, 8)))
        y = rng.normal(0.0, 1.0, size=(7, 8))
        base = B.mab(x, Tensor(y), p).data
        np.testing.assert_allclose(
            B.mab(x, Tensor(y[rng.permutation(7)]), p).data, base, rtol=1e-12)

    def test_sab_equals_mab_with_itself(self):
        rng = Rng(SEED)
        p = B.MABParams.create("sab", 8, 4, rng)
        x = Tensor(rng.normal(0.0, 1.0, size=(6, 8)))
        np.testing.assert_array_equal(B.sab(x, p).data, B.mab(x, x, p).data)

    def test_isab_shapes_and_equivariance(self):
        rng = Rng(SEED)
        p = B.ISABParams.create("isab", 8, 2, 3, rng)
        x = Tensor(rng.normal(0.0, 1.0, size=(9, 8)))
        out = B.isab(x, p)
        assert out.shape == (9, 8)
        perm = rng.permutation(9)
        np.testing.assert_allclose(B.isab(Tensor(x.data[perm]), p).data,
                                   out.data[perm], rtol=1e-12)

    def test_isab_needs_inducing_points(self):
        with pytest.raises(ValueError):
            B.ISABParams.create("isab", 8, 2, 0, Rng(SEED))


class TestPooling:
    def test_pma_outputs_one_row_per_seed(self):
        rng = Rng(SEED)
        for k in (1, 4):
            p = B.PMAParams.create("pma", 8, 2, k, rng)
            z = Tensor(rng.normal(0.0, 1.0, size=(11, 8)))
            assert B.pma(z, p).shape == (k, 8)

    def test_pma_is_order_invariant(self):
        rng = Rng(SEED)
        p = B.PMAParams.create("pma", 8, 2, 4, rng)
        z = rng.normal(0.0, 1.0, size=(11, 8))
        base = B.pma(Tensor(z), p).data
        np.testing.assert_allclose(
            B.pma(Tensor(z[rng.permutation(11)]), p).data, base, rtol=1e-12)

    def test_pma_optional_leading_rff(self):
        rng = Rng(SEED)
        p = B.PMAParams.create("pma", 8, 2, 1, rng, pre_rff=True)
        assert p.w_pre is not None
        z = Tensor(rng.normal(0.0, 1.0, size=(5, 8)))
        assert B.pma(z, p).shape == (1, 8)

    def test_dotprod_pool_with_zero_weights_is_row_mean(self):
        rng = Rng(SEED)
        z = Tensor(rng.normal(0.0, 1.0, size=(7, 4)))
        out = B.dotprod_pool(z, Tensor(np.zeros((1, 4))))
        np.testing.assert_allclose(out.data, z.data.mean(axis=0, keepdims=True),
                                   atol=1e-14)

    def test_rffp_layer_matches_formula(self):
        rng = Rng(SEED)
        p = B.RFFPParams.create("r")
        p.lam.data[:] = 0.6
        p.gam.data[:] = -1.1
        x = rng.normal(0.0, 1.0, size=(5, 3))
        expected = np.maximum(0.6 * x - 1.1 * x.mean(axis=0, keepdims=True), 0.0)
        np.testing.assert_allclose(B.rffp_layer(Tensor(x), p, "mean").data,
                                   expected, rtol=1e-13)
        expected = np.maximum(0.6 * x - 1.1 * x.max(axis=0, keepdims=True), 0.0)
        np.testing.assert_allclose(B.rffp_layer(Tensor(x), p, "max").data,
                                   expected, rtol=1e-13)
        with pytest.raises(ValueError):
            B.rffp_layer(Tensor(x), p, "sum")


class TestPoolingLemmas:
    def test_zero_query_attention_is_exact_mean(self):
        rng = Rng(SEED)
        z = Tensor(rng.normal(0.0, 2.0, size=(9, 6)))
        out = B.att(Tensor(np.zeros((1, 6))), z, z, math.sqrt(6.0)).data
        err = np.max(np.abs(out - z.data.mean(axis=0, keepdims=True)))
        assert err <= LEMMA_TOL

    def test_zero_seed_one_plus_relu_is_exact_sum(self):
        # Identity projections via column-slice selectors; a zero query makes
        # every (1 + relu) weight exactly one, so attention sums the rows.
        rng = Rng(SEED)
        d, h = 8, 4
        dh = d // h
        eye = np.eye(d)
        mk = lambda nm, j: Parameter(nm, eye[:, j * dh:(j + 1) * dh].copy())
        p = B.MultiheadParams(
            heads=h,
            wq=[mk(f"wq{j}", j) for j in range(h)],
            wk=[mk(f"wk{j}", j) for j in range(h)],
            wv=[mk(f"wv{j}", j) for j in range(h)],
            wo=Parameter("wo", eye.copy()))
        z = Tensor(rng.normal(0.0, 2.0, size=(9, d)))
        out = B.multihead(Tensor(np.zeros((1, d))), z, z, p, math.sqrt(d),
                          weights="one_plus_relu").data
        err = np.max(np.abs(out - z.data.sum(axis=0, keepdims=True)))
        assert err <= LEMMA_TOL


class TestBlockGradients:
    def test_mab_gradients(self):
        rng = Rng(SEED)
        p = B.MABParams.create("mab", 4, 2, rng)
        x = Tensor(rng.normal(0.0, 1.0, size=(3, 4)))
        y = Tensor(rng.normal(0.0, 1.0, size=(4, 4)))
        probe = Tensor(rng.normal(0.0, 1.0, size=(3, 4)))
        err = T.finite_diff_check(
            lambda: T.sum_all(T.mul(B.mab(x, y, p), probe)), p.parameters())
        assert err <= 1e-6

    def test_pma_gradients(self):
        rng = Rng(SEED)
        p = B.PMAParams.create("pma", 4, 2, 2, rng)
        z = Tensor(rng.normal(0.0, 1.0, size=(5, 4)))
        probe = Tensor(rng.normal(0.0, 1.0, size=(2, 4)))
        err = T.finite_diff_check(
            lambda: T.sum_all(T.mul(B.pma(z, p), probe)), p.parameters())
        assert err <= 1e-6
