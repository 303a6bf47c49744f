"""Gated multimodal fusion: attention structure, gate behavior, task
symmetry, and oracle agreement.
"""

import numpy as np
import numpy.testing as npt
import pytest

from mmtl.errors import ArgumentError, DimensionError
from mmtl.fusion import ModalityFeatures, concat_fuse, \
    fuse_all, init_concat_fuse, init_gate_params, mean_fallback, shared_attention, \
    task_fuse, task_gates
from mmtl.gradcheck import assert_gradients_close
from mmtl.ops import softmax
from mmtl.tensor import Tensor, mul, param, tsum

import oracles


def make_feats(rng, c=4, h=3, w=3, as_params=False):
    mk = param if as_params else Tensor
    return ModalityFeatures(mk(rng.normal(size=(c, h, w))),
                            mk(rng.normal(size=(c, h, w))),
                            mk(rng.normal(size=(c, h, w))))


class TestSharedAttention:
    def test_zero_query_gives_row_mean_of_values(self):
        rng = np.random.default_rng(0)
        c = 4
        m = make_feats(rng, c=c)
        p = init_gate_params(c, rng)
        p.wq.data = np.zeros_like(p.wq.data)
        p.bq.data = np.zeros_like(p.bq.data)
        s = shared_attention(m, p).data
        # uniform attention averages V over its channel rows
        cat = np.concatenate([m.h1.data, m.h2.data, m.h3.data], 0).reshape(3 * c, -1)
        v = p.wv.data.reshape(c, 3 * c) @ cat + p.bv.data[:, None]
        expect = np.broadcast_to(v.mean(axis=0), (c, v.shape[1])).reshape(s.shape)
        npt.assert_allclose(s, expect, rtol=1e-12)

    def test_zero_values_give_zero(self):
        rng = np.random.default_rng(1)
        m = make_feats(rng)
        p = init_gate_params(4, rng)
        p.wv.data = np.zeros_like(p.wv.data)
        p.bv.data = np.zeros_like(p.bv.data)
        npt.assert_allclose(shared_attention(m, p).data, 0.0, atol=1e-15)

    def test_rows_stochastic(self):
        rng = np.random.default_rng(2)
        c, h, w = 5, 2, 3
        m = make_feats(rng, c=c, h=h, w=w)
        p = init_gate_params(c, rng)
        cat = np.concatenate([m.h1.data, m.h2.data, m.h3.data], 0).reshape(3 * c, -1)
        q = p.wq.data.reshape(c, 3 * c) @ cat + p.bq.data[:, None]
        k = p.wk.data.reshape(c, 3 * c) @ cat + p.bk.data[:, None]
        attn = softmax(Tensor(q @ k.T / np.sqrt(h * w)), axis=1).data
        npt.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-9)

    def test_matches_reference(self):
        rng = np.random.default_rng(3)
        m = make_feats(rng, c=2, h=2, w=2)
        p = init_gate_params(2, rng)
        got = shared_attention(m, p).data
        ref = oracles.attention_ref(m.h1.data, m.h2.data, m.h3.data, p)
        assert np.abs(got - ref).max() < 1e-10

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            ModalityFeatures(Tensor(np.zeros((2, 2, 2))), Tensor(np.zeros((2, 2, 2))),
                             Tensor(np.zeros((2, 2, 3))))

    def test_mean_fallback(self):
        rng = np.random.default_rng(4)
        m = make_feats(rng)
        expect = (m.h1.data + m.h2.data + m.h3.data) / 3.0
        npt.assert_allclose(mean_fallback(m).data, expect, rtol=1e-15)


class TestTaskFuse:
    def test_zero_preactivation_gives_half_gates(self):
        rng = np.random.default_rng(5)
        c = 4
        m = make_feats(rng, c=c)
        p = init_gate_params(c, rng)
        r = 1
        p.gate_w[r].data = np.zeros_like(p.gate_w[r].data)
        p.gate_b[r].data = np.zeros_like(p.gate_b[r].data)
        p.bn_shift[r].data = np.zeros_like(p.bn_shift[r].data)
        s = Tensor(rng.normal(size=(c, 3, 3)))
        out = task_fuse(m, s, p, r)
        expect = 0.5 * (m.h1.data + m.h2.data + m.h3.data)
        npt.assert_allclose(out.data, expect, rtol=1e-12)

    def test_single_modality_passthrough(self):
        rng = np.random.default_rng(6)
        c = 4
        h1 = Tensor(rng.normal(size=(c, 3, 3)))
        m = ModalityFeatures(h1, Tensor(np.zeros((c, 3, 3))), Tensor(np.zeros((c, 3, 3))))
        p = init_gate_params(c, rng)
        s = Tensor(rng.normal(size=(c, 3, 3)))
        gates = task_gates(s, p, 0, train=True)
        out = task_fuse(m, s, p, 0)
        npt.assert_allclose(out.data, h1.data * gates[0].data, rtol=1e-12)

    def test_gates_bounded(self):
        rng = np.random.default_rng(7)
        p = init_gate_params(4, rng)
        s = Tensor(rng.normal(scale=3, size=(4, 3, 3)))
        for r in range(4):
            for g in task_gates(s, p, r):
                assert np.all(g.data > 0) and np.all(g.data < 1)

    def test_task_index_out_of_range(self):
        rng = np.random.default_rng(8)
        p = init_gate_params(4, rng)
        with pytest.raises(ArgumentError):
            task_gates(Tensor(np.zeros((4, 3, 3))), p, 4)

    def test_matches_reference(self):
        rng = np.random.default_rng(9)
        m = make_feats(rng, c=3, h=2, w=2)
        p = init_gate_params(3, rng)
        s = rng.normal(size=(3, 2, 2))
        for r in range(4):
            got = task_fuse(m, Tensor(s), p, r, train=True).data
            ref = oracles.task_fuse_ref(m.h1.data, m.h2.data, m.h3.data, s, p, r)
            assert np.abs(got - ref).max() < 1e-10

    def test_gradients(self):
        rng = np.random.default_rng(10)
        m = make_feats(rng, c=3, h=2, w=2, as_params=True)
        p = init_gate_params(3, rng)
        probe = Tensor(rng.normal(size=(3, 2, 2)))

        def f():
            s = shared_attention(m, p)
            return tsum(mul(task_fuse(m, s, p, 2), probe))

        assert_gradients_close(f, {"h1": m.h1, "h2": m.h2, "h3": m.h3,
                                   **p.tensors()}, max_elements=6,
                               rng=np.random.default_rng(0))


class TestFuseAll:
    def test_telemetry_half_at_zero_preactivations(self):
        rng = np.random.default_rng(11)
        c = 4
        m = make_feats(rng, c=c)
        p = init_gate_params(c, rng)
        for r in range(4):
            p.gate_w[r].data = np.zeros_like(p.gate_w[r].data)
            p.gate_b[r].data = np.zeros_like(p.gate_b[r].data)
            p.bn_shift[r].data = np.zeros_like(p.bn_shift[r].data)
        _, tele = fuse_all(m, p)
        npt.assert_allclose(tele, 0.5, atol=1e-12)
        assert tele.shape == (4, 3)

    def test_identical_gate_params_give_identical_task_features(self):
        rng = np.random.default_rng(12)
        c = 4
        m = make_feats(rng, c=c)
        p = init_gate_params(c, rng)
        for r in range(1, 4):
            p.gate_w[r].data = p.gate_w[0].data.copy()
            p.gate_b[r].data = p.gate_b[0].data.copy()
            p.bn_scale[r].data = p.bn_scale[0].data.copy()
            p.bn_shift[r].data = p.bn_shift[0].data.copy()
        feats, tele = fuse_all(m, p)
        for r in range(1, 4):
            npt.assert_array_equal(feats[r].data, feats[0].data)
        npt.assert_allclose(tele, np.broadcast_to(tele[0], (4, 3)), atol=1e-15)

    def test_single_gate_unit_shares_across_tasks(self):
        rng = np.random.default_rng(13)
        m = make_feats(rng)
        p = init_gate_params(4, rng, num_gates=1)
        feats, _ = fuse_all(m, p)
        for r in range(1, 4):
            npt.assert_array_equal(feats[r].data, feats[0].data)


class TestConcatFuse:
    def test_block_selecting_identity(self):
        rng = np.random.default_rng(14)
        c = 4
        m = make_feats(rng, c=c)
        p = init_concat_fuse(c, rng)
        w = np.zeros((c, 3 * c, 1, 1))
        w[:, :c, 0, 0] = np.eye(c)
        p.w.data = w
        p.b.data = np.zeros(c)
        npt.assert_allclose(concat_fuse(m, p).data, m.h1.data, rtol=1e-14)

    def test_zero_modalities_give_zero(self):
        rng = np.random.default_rng(15)
        z = Tensor(np.zeros((4, 3, 3)))
        m = ModalityFeatures(z, z, z)
        p = init_concat_fuse(4, rng)
        p.b.data = np.zeros(4)
        npt.assert_allclose(concat_fuse(m, p).data, 0.0, atol=1e-15)

    def test_matches_direct_computation(self):
        rng = np.random.default_rng(16)
        m = make_feats(rng, c=3, h=2, w=2)
        p = init_concat_fuse(3, rng)
        cat = np.concatenate([m.h1.data, m.h2.data, m.h3.data], 0).reshape(9, 4)
        expect = (p.w.data.reshape(3, 9) @ cat + p.b.data[:, None]).reshape(3, 2, 2)
        assert np.abs(concat_fuse(m, p).data - expect).max() < 1e-10
