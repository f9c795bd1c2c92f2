"""Attention scores, spatial bias terms, masking, and the encoder
stack."""

import math

import numpy as np
import pytest

from ocrqa import tensor as T
from ocrqa.attention import (EncoderParams, SasaContext, additive_mask,
                             attention_output, encoder_forward, init_encoder,
                             init_sasa_bias, raw_scores, sasa_context,
                             sasa_scores)
from ocrqa.config import AttentionConfig
from ocrqa.data import OcrToken
from ocrqa.errors import ShapeError
from ocrqa.tensor import Tensor

from helpers import check_gradients


def attn_cfg(**kw):
    base = dict(heads=2, d_k=2, aoe_layers=1, fusion_layers=1,
                rel_range_1d=2, rel_range_2d=2)
    base.update(kw)
    return AttentionConfig(**base)


def tok(x0, y0, text="w"):
    return OcrToken(text=text, bbox=(x0, y0, min(x0 + 0.05, 1.0),
                                     min(y0 + 0.05, 1.0), 10.0, 10.0),
                    visual_feature=(0.0,))


# -- raw scores -------------------------------------------------------------

def test_raw_scores_orthonormal_rows_identity_projections():
    rows = Tensor(np.eye(3))
    eye = Tensor(np.eye(3))
    out = raw_scores(rows, rows, eye, eye)
    expect = np.eye(3) / math.sqrt(3)
    np.testing.assert_allclose(out.data, expect, rtol=0, atol=1e-15)


def test_raw_scores_hand_case():
    q = Tensor(np.array([[1.0, 2.0], [0.5, -1.0]]))
    k = Tensor(np.array([[2.0, 0.0], [1.0, 1.0]]))
    wq = Tensor(np.eye(2))
    wk = Tensor(np.eye(2))
    out = raw_scores(q, k, wq, wk)
    expect = (q.data @ k.data.T) / math.sqrt(2)
    np.testing.assert_allclose(out.data, expect, rtol=1e-15)


def test_raw_scores_bilinear_in_input_scale():
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(4, 3))
    wq, wk = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    base = raw_scores(Tensor(rows), Tensor(rows), Tensor(wq), Tensor(wk))
    scaled = raw_scores(Tensor(3.0 * rows), Tensor(3.0 * rows),
                        Tensor(wq), Tensor(wk))
    np.testing.assert_allclose(scaled.data, 9.0 * base.data, rtol=1e-12)


def test_raw_scores_width_mismatch():
    with pytest.raises(ShapeError):
        raw_scores(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))),
                   Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 4))))


# -- spatial bias -----------------------------------------------------------

def test_sasa_context_indices_clamp():
    bias = init_sasa_bias(attn_cfg())
    tokens = [tok(i / 8, 0.0) for i in range(6)]
    ctx = sasa_context(tokens, bias)
    # reading-order deltas clamp at R=2, then shift by R into [0, 2R]
    assert ctx.idx1d[0, 5] == 4   # clamp(5, 2) + 2
    assert ctx.idx1d[5, 0] == 0   # clamp(-5, -2) + 2
    assert ctx.idx1d[2, 2] == 2   # zero offset lands mid-table
    assert ctx.idx1d.min() >= 0 and ctx.idx1d.max() <= 4


def test_sasa_context_uses_top_left_corner_buckets():
    bias = init_sasa_bias(attn_cfg())
    a, b = tok(0.0, 0.0), tok(0.9, 0.4)
    ctx = sasa_context([a, b], bias)
    bx_a = min(int(0.0 * 2), 1)
    bx_b = min(int(0.9 * 2), 1)
    assert ctx.idx2dx[0, 1] == np.clip(bx_b - bx_a, -2, 2) + 2
    by_b = min(int(0.4 * 2), 1)
    assert ctx.idx2dy[0, 1] == np.clip(by_b - 0, -2, 2) + 2


def test_zero_bias_leaves_raw_untouched():
    cfg = attn_cfg()
    bias = init_sasa_bias(cfg)
    tokens = [tok(0.1, 0.1), tok(0.6, 0.7), tok(0.3, 0.9)]
    ctx = sasa_context(tokens, bias)
    raw = Tensor(np.random.default_rng(1).normal(size=(3, 3)))
    out = sasa_scores(raw, ctx, bias, head=0)
    np.testing.assert_array_equal(out.data, raw.data)


def test_diagonal_adds_zero_offset_entries():
    cfg = attn_cfg()
    bias = init_sasa_bias(cfg)
    rng = np.random.default_rng(2)
    bias.bias1d.data[:] = rng.normal(size=bias.bias1d.shape)
    bias.bias2dx.data[:] = rng.normal(size=bias.bias2dx.shape)
    bias.bias2dy.data[:] = rng.normal(size=bias.bias2dy.shape)
    tokens = [tok(0.1, 0.1), tok(0.6, 0.7)]
    ctx = sasa_context(tokens, bias)
    raw = Tensor(np.zeros((2, 2)))
    r, b = cfg.rel_range_1d, cfg.rel_range_2d
    for head in range(cfg.heads):
        out = sasa_scores(raw, ctx, bias, head=head)
        expect = (bias.bias1d.data[head, r] + bias.bias2dx.data[head, b]
                  + bias.bias2dy.data[head, b])
        for i in range(2):
            assert out.data[i, i] == expect


def test_sasa_scores_match_bruteforce_loop_exactly():
    cfg = attn_cfg()
    bias = init_sasa_bias(cfg)
    rng = np.random.default_rng(3)
    bias.bias1d.data[:] = rng.normal(size=bias.bias1d.shape)
    bias.bias2dx.data[:] = rng.normal(size=bias.bias2dx.shape)
    bias.bias2dy.data[:] = rng.normal(size=bias.bias2dy.shape)
    n = 8
    tokens = [tok(rng.uniform(0, 0.9), rng.uniform(0, 0.9)) for _ in range(n)]
    ctx = sasa_context(tokens, bias)
    raw = Tensor(rng.normal(size=(n, n)))
    r, b = cfg.rel_range_1d, cfg.rel_range_2d
    bx = [min(int(t.bbox[0] * b), b - 1) for t in tokens]
    by = [min(int(t.bbox[1] * b), b - 1) for t in tokens]
    for head in range(cfg.heads):
        out = sasa_scores(raw, ctx, bias, head=head)
        for i in range(n):
            for j in range(n):
                expect = raw.data[i, j]
                expect = expect + bias.bias1d.data[
                    head, int(np.clip(j - i, -r, r)) + r]
                expect = expect + bias.bias2dx.data[
                    head, int(np.clip(bx[j] - bx[i], -b, b)) + b]
                expect = expect + bias.bias2dy.data[
                    head, int(np.clip(by[j] - by[i], -b, b)) + b]
                assert out.data[i, j] == expect


def test_sasa_translation_invariance():
    cfg = attn_cfg(rel_range_2d=4)
    bias = init_sasa_bias(cfg)
    rng = np.random.default_rng(4)
    bias.bias2dx.data[:] = rng.normal(size=bias.bias2dx.shape)
    bias.bias2dy.data[:] = rng.normal(size=bias.bias2dy.shape)
    b = cfg.rel_range_2d
    # corners on the bucket lattice; shifting by one bucket width keeps
    # every pairwise bucket delta identical
    base = [(0.0, 0.125), (0.25, 0.5), (0.5, 0.0)]
    shift = 1.0 / b
    toks0 = [tok(x, y) for x, y in base]
    toks1 = [tok(x + shift, y + shift) for x, y in base]
    raw = Tensor(rng.normal(size=(3, 3)))
    s0 = sasa_scores(raw, sasa_context(toks0, bias), bias)
    s1 = sasa_scores(raw, sasa_context(toks1, bias), bias)
    np.testing.assert_array_equal(s0.data, s1.data)


# -- attention output -------------------------------------------------------

def test_attention_output_saturated_diagonal_selects_self():
    rng = np.random.default_rng(5)
    v = rng.normal(size=(3, 4))
    wv = rng.normal(size=(4, 4))
    scores = Tensor(np.eye(3) * 60.0)
    out = attention_output(scores, Tensor(v), Tensor(wv))
    np.testing.assert_allclose(out.data, v @ wv, atol=1e-6)


def test_attention_output_uniform_scores_average():
    rng = np.random.default_rng(6)
    v = rng.normal(size=(4, 3))
    wv = rng.normal(size=(3, 3))
    out = attention_output(Tensor(np.zeros((4, 4))), Tensor(v), Tensor(wv))
    mean = (v @ wv).mean(axis=0)
    for i in range(4):
        np.testing.assert_allclose(out.data[i], mean, rtol=1e-12, atol=1e-12)


def test_attention_output_matches_dense_recomputation():
    rng = np.random.default_rng(7)
    scores = rng.normal(size=(5, 5))
    v = rng.normal(size=(5, 3))
    wv = rng.normal(size=(3, 3))
    out = attention_output(Tensor(scores), Tensor(v), Tensor(wv))
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    weights = e / e.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out.data, weights @ (v @ wv), rtol=1e-12,
                               atol=1e-12)


def test_softmax_rows_sum_to_one_with_biases():
    cfg = attn_cfg()
    bias = init_sasa_bias(cfg)
    rng = np.random.default_rng(8)
    bias.bias1d.data[:] = rng.normal(size=bias.bias1d.shape)
    tokens = [tok(rng.uniform(0, 0.9), rng.uniform(0, 0.9)) for _ in range(5)]
    scored = sasa_scores(Tensor(rng.normal(size=(5, 5))),
                         sasa_context(tokens, bias), bias)
    w = T.softmax_rows(scored)
    np.testing.assert_allclose(w.data.sum(axis=1), np.ones(5), rtol=0,
                               atol=1e-12)


# -- masks ------------------------------------------------------------------

def test_additive_mask_values():
    allowed = np.array([[True, False], [True, True]])
    mask = additive_mask(allowed)
    assert mask.data[0, 0] == 0.0
    assert mask.data[0, 1] == -1e9
    assert not mask.requires_grad


def test_additive_mask_zeroes_weights_exactly():
    rng = np.random.default_rng(9)
    scores = Tensor(rng.normal(size=(3, 3)))
    allowed = np.array([[True, True, False],
                        [True, True, True],
                        [False, True, True]])
    w = T.softmax_rows(T.add(scores, additive_mask(allowed)))
    assert w.data[0, 2] == 0.0
    assert w.data[2, 0] == 0.0
    np.testing.assert_allclose(w.data.sum(axis=1), np.ones(3), atol=1e-12)


def test_additive_mask_rejects_unattendable_row():
    with pytest.raises(ShapeError, match="attend"):
        additive_mask(np.array([[False, False], [True, True]]))


def test_additive_mask_rejects_non_square():
    with pytest.raises(ShapeError, match="square"):
        additive_mask(np.ones((2, 3), dtype=bool))


# -- encoder stack ----------------------------------------------------------

def test_zero_layers_is_identity():
    enc = EncoderParams(layers=(), heads=2, d_k=2)
    x = Tensor(np.random.default_rng(10).normal(size=(3, 4)))
    out = encoder_forward(x, enc)
    np.testing.assert_array_equal(out.data, x.data)


def test_zero_bias_spatial_equals_plain():
    cfg = attn_cfg()
    rng = np.random.default_rng(11)
    enc = init_encoder(2, 4, cfg, rng)
    bias = init_sasa_bias(cfg)
    tokens = [tok(0.1, 0.3), tok(0.5, 0.5), tok(0.8, 0.1)]
    ctx = sasa_context(tokens, bias)
    x = Tensor(rng.normal(size=(3, 4)))
    plain = encoder_forward(x, enc)
    spatial = encoder_forward(x, enc, sasa=(ctx, bias))
    np.testing.assert_array_equal(plain.data, spatial.data)


def test_vanilla_encoder_permutation_equivariant():
    cfg = attn_cfg()
    rng = np.random.default_rng(12)
    enc = init_encoder(1, 4, cfg, rng)
    x = rng.normal(size=(5, 4))
    perm = np.array([3, 0, 4, 1, 2])
    out = encoder_forward(Tensor(x), enc)
    out_p = encoder_forward(Tensor(x[perm]), enc)
    np.testing.assert_allclose(out_p.data, out.data[perm], rtol=1e-12,
                               atol=1e-12)


def test_spatial_encoder_permutation_consistent():
    cfg = attn_cfg()
    rng = np.random.default_rng(13)
    enc = init_encoder(1, 4, cfg, rng)
    bias = init_sasa_bias(cfg)
    bias.bias1d.data[:] = rng.normal(size=bias.bias1d.shape)
    bias.bias2dx.data[:] = rng.normal(size=bias.bias2dx.shape)
    bias.bias2dy.data[:] = rng.normal(size=bias.bias2dy.shape)
    tokens = [tok(rng.uniform(0, 0.9), rng.uniform(0, 0.9)) for _ in range(5)]
    ctx = sasa_context(tokens, bias)
    x = rng.normal(size=(5, 4))
    perm = np.array([2, 4, 0, 3, 1])
    # permute the precomputed index matrices alongside the rows
    ctx_p = SasaContext(idx1d=ctx.idx1d[perm][:, perm],
                        idx2dx=ctx.idx2dx[perm][:, perm],
                        idx2dy=ctx.idx2dy[perm][:, perm])
    out = encoder_forward(Tensor(x), enc, sasa=(ctx, bias))
    out_p = encoder_forward(Tensor(x[perm]), enc, sasa=(ctx_p, bias))
    np.testing.assert_allclose(out_p.data, out.data[perm], rtol=1e-12,
                               atol=1e-12)


def test_mask_blocks_information_flow():
    cfg = attn_cfg()
    rng = np.random.default_rng(14)
    enc = init_encoder(2, 4, cfg, rng)
    x = rng.normal(size=(4, 4))
    allowed = np.ones((4, 4), dtype=bool)
    allowed[:3, 3] = False  # rows 0-2 never see row 3
    base = encoder_forward(Tensor(x), enc, mask=additive_mask(allowed))
    bumped = x.copy()
    bumped[3] += 7.0
    moved = encoder_forward(Tensor(bumped), enc, mask=additive_mask(allowed))
    np.testing.assert_array_equal(base.data[:3], moved.data[:3])
    assert np.abs(base.data[3] - moved.data[3]).max() > 1e-6


def test_encoder_gradients_match_finite_differences():
    cfg = attn_cfg()
    rng = np.random.default_rng(15)
    enc = init_encoder(1, 4, cfg, rng)
    bias = init_sasa_bias(cfg)
    tokens = [tok(0.1, 0.2), tok(0.6, 0.6), tok(0.3, 0.8)]
    ctx = sasa_context(tokens, bias)
    x = rng.normal(size=(3, 4))
    layer = enc.layers[0]
    # default 0.02-scale init leaves d(loss)/d(wq) near the FD noise
    # floor; use unit-order weights so central differences resolve it
    for field in ("wq", "wk", "wv", "wo", "ff1", "ff2"):
        t = getattr(layer, field)
        t.data[...] = rng.normal(size=t.shape) * 0.5
    arrays = {"wq": layer.wq.data.copy(),
              "b1d": rng.normal(size=bias.bias1d.shape),
              "ff1": layer.ff1.data.copy()}

    def build_loss(tensors):
        layer.wq = tensors["wq"]
        bias.bias1d = tensors["b1d"]
        layer.ff1 = tensors["ff1"]
        return T.sum_all(encoder_forward(Tensor(x), enc, sasa=(ctx, bias)))

    check_gradients(build_loss, arrays)
