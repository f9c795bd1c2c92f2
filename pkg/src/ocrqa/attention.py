"""Transformer encoder stacks: multi-head self-attention with optional
spatial relative-position score biases, pre-norm residual blocks, and a
GELU feed-forward sublayer.

The spatial variant adds three learned bias terms to each raw attention
score a_ij: a 1D term indexed by the clamped token distance j-i, and two
2D terms indexed by the bucketized difference of box top-left corners
along x and y.  Bias tables are per-head and shared across layers, and
start at zero, so a freshly initialized spatial stack scores exactly
like a plain one.

Attention masks are additive: disallowed pairs receive a -1e9 constant,
which underflows to an exact zero weight after the max-subtracted
softmax, so masked columns cannot influence outputs even in the last
bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import AttentionConfig
from .data import OcrToken
from .errors import ShapeError
from .tensor import Tensor

__all__ = [
    "SasaBias", "SasaContext", "LayerParams", "EncoderParams",
    "init_sasa_bias", "init_encoder", "sasa_context",
    "raw_scores", "sasa_scores", "attention_output", "encoder_forward",
    "additive_mask",
]

MASK_VALUE = -1e9


@dataclass
class SasaBias:
    """Per-head relative-position bias tables, shared across layers."""

    bias1d: Tensor      # [heads, 2R+1]
    bias2dx: Tensor     # [heads, 2B+1]
    bias2dy: Tensor     # [heads, 2B+1]
    max_dist_1d: int    # R
    max_dist_2d: int    # B

    def params(self, prefix: str = "sasa") -> dict[str, Tensor]:
        return {f"{prefix}.bias1d": self.bias1d,
                f"{prefix}.bias2dx": self.bias2dx,
                f"{prefix}.bias2dy": self.bias2dy}


@dataclass(frozen=True)
class SasaContext:
    """Precomputed clamped+shifted index matrices for one token sequence:
    entries index directly into the bias tables."""

    idx1d: np.ndarray   # [n, n] in [0, 2R]
    idx2dx: np.ndarray  # [n, n] in [0, 2B]
    idx2dy: np.ndarray  # [n, n] in [0, 2B]


@dataclass
class LayerParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    ff1: Tensor
    ff1_bias: Tensor
    ff2: Tensor
    ff2_bias: Tensor

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{name}": getattr(self, name)
                for name in ("ln1_gain", "ln1_bias", "wq", "bq", "wk", "bk",
                             "wv", "bv", "wo", "bo", "ln2_gain", "ln2_bias",
                             "ff1", "ff1_bias", "ff2", "ff2_bias")}


@dataclass
class EncoderParams:
    layers: tuple[LayerParams, ...]
    heads: int
    d_k: int

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.l{i}"))
        return out


def init_sasa_bias(cfg: AttentionConfig) -> SasaBias:
    r, b = cfg.rel_range_1d, cfg.rel_range_2d
    return SasaBias(
        bias1d=Tensor(np.zeros((cfg.heads, 2 * r + 1)), requires_grad=True),
        bias2dx=Tensor(np.zeros((cfg.heads, 2 * b + 1)), requires_grad=True),
        bias2dy=Tensor(np.zeros((cfg.heads, 2 * b + 1)), requires_grad=True),
        max_dist_1d=r, max_dist_2d=b)


def init_encoder(layers: int, d: int, cfg: AttentionConfig,
                 rng: np.random.Generator) -> EncoderParams:
    if cfg.heads * cfg.d_k != d:
        raise ShapeError(f"heads*d_k must equal d: {cfg.heads}*{cfg.d_k} != {d}")

    def weight(rows, cols):
        return Tensor(rng.normal(0.0, 0.02, size=(rows, cols)), requires_grad=True)

    def zeros(n):
        return Tensor(np.zeros(n), requires_grad=True)

    def ones(n):
        return Tensor(np.ones(n), requires_grad=True)

    built = []
    for _ in range(layers):
        built.append(LayerParams(
            ln1_gain=ones(d), ln1_bias=zeros(d),
            wq=weight(d, d), bq=zeros(d),
            wk=weight(d, d), bk=zeros(d),
            wv=weight(d, d), bv=zeros(d),
            wo=weight(d, d), bo=zeros(d),
            ln2_gain=ones(d), ln2_bias=zeros(d),
            ff1=weight(d, 4 * d), ff1_bias=zeros(4 * d),
            ff2=weight(4 * d, d), ff2_bias=zeros(d)))
    return EncoderParams(layers=tuple(built), heads=cfg.heads, d_k=cfg.d_k)


# ---------------------------------------------------------------------------
# score computation

def raw_scores(q_rows: Tensor, k_rows: Tensor, wq: Tensor, wk: Tensor) -> Tensor:
    """Scaled dot-product scores (Q Wq)(K Wk)^T / sqrt(d_k) for one head."""
    q = T.matmul(q_rows, wq)
    k = T.matmul(k_rows, wk)
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"projected widths disagree: {q.shape} vs {k.shape}")
    return T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(q.shape[1]))


def sasa_context(tokens: Sequence[OcrToken], bias: SasaBias) -> SasaContext:
    """Index matrices from reading-order positions and box top-left
    corners.  Corner coordinates are bucketized into max_dist_2d uniform
    buckets of the normalized page, so all bucket deltas already lie
    within the clamp range; the clamp still applies for safety."""
    n = len(tokens)
    r, b = bias.max_dist_1d, bias.max_dist_2d
    pos = np.arange(n)
    d1 = np.clip(pos[None, :] - pos[:, None], -r, r) + r
    bx = np.array([min(int(t.bbox[0] * b), b - 1) for t in tokens])
    by = np.array([min(int(t.bbox[1] * b), b - 1) for t in tokens])
    dx = np.clip(bx[None, :] - bx[:, None], -b, b) + b
    dy = np.clip(by[None, :] - by[:, None], -b, b) + b
    return SasaContext(idx1d=d1, idx2dx=dx, idx2dy=dy)


def _bias_matrix(table: Tensor, head: int, idx: np.ndarray) -> Tensor:
    # one head's row as a column table, gathered by the flat index matrix
    row = T.transpose(T.slice_axis(table, 0, head, 1))
    flat = T.embedding_lookup(row, idx.reshape(-1))
    return T.reshape(flat, idx.shape)


def sasa_scores(raw: Tensor, ctx: SasaContext, bias: SasaBias,
                head: int = 0) -> Tensor:
    """Raw scores plus the three relative-position bias lookups for one
    head."""
    n = raw.shape[0]
    if raw.shape != (n, n) or ctx.idx1d.shape != (n, n):
        raise ShapeError(f"score/context shapes disagree: {raw.shape} vs "
                         f"{ctx.idx1d.shape}")
    out = T.add(raw, _bias_matrix(bias.bias1d, head, ctx.idx1d))
    out = T.add(out, _bias_matrix(bias.bias2dx, head, ctx.idx2dx))
    return T.add(out, _bias_matrix(bias.bias2dy, head, ctx.idx2dy))


def attention_output(scores: Tensor, v_rows: Tensor, wv: Tensor) -> Tensor:
    """Softmax over each score row, then weighted sum of projected value
    rows."""
    return T.matmul(T.softmax_rows(scores), T.matmul(v_rows, wv))


def additive_mask(allowed: np.ndarray) -> Tensor:
    """Boolean [n, n] allow-matrix -> additive score constants (0 where
    allowed, -1e9 where not)."""
    if allowed.ndim != 2 or allowed.shape[0] != allowed.shape[1]:
        raise ShapeError(f"mask must be square, got {allowed.shape}")
    if not allowed.any(axis=1).all():
        raise ShapeError("every row must be allowed to attend somewhere")
    return Tensor(np.where(allowed, 0.0, MASK_VALUE))


# ---------------------------------------------------------------------------
# encoder stack

def _multi_head(x: Tensor, layer: LayerParams, heads: int, d_k: int,
                sasa: tuple[SasaContext, SasaBias] | None,
                mask: Tensor | None) -> Tensor:
    q = T.add(T.matmul(x, layer.wq), layer.bq)
    k = T.add(T.matmul(x, layer.wk), layer.bk)
    v = T.add(T.matmul(x, layer.wv), layer.bv)
    scale = 1.0 / math.sqrt(d_k)
    head_outputs = []
    for h in range(heads):
        qh = T.slice_axis(q, 1, h * d_k, d_k)
        kh = T.slice_axis(k, 1, h * d_k, d_k)
        vh = T.slice_axis(v, 1, h * d_k, d_k)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), scale)
        if sasa is not None:
            ctx, bias = sasa
            scores = sasa_scores(scores, ctx, bias, head=h)
        if mask is not None:
            scores = T.add(scores, mask)
        head_outputs.append(T.matmul(T.softmax_rows(scores), vh))
    joined = head_outputs[0] if heads == 1 else T.concat(head_outputs, axis=1)
    return T.add(T.matmul(joined, layer.wo), layer.bo)


def encoder_forward(x: Tensor, enc: EncoderParams,
                    sasa: tuple[SasaContext, SasaBias] | None = None,
                    mask: Tensor | None = None) -> Tensor:
    """Pre-norm block stack; zero layers is the identity.

    ``sasa`` supplies (index context, bias tables) for the spatial
    variant; ``mask`` is an additive score matrix applied in every layer.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"encoder input must be 2-D, got {x.shape}")
    out = x
    for layer in enc.layers:
        normed = T.layer_norm(out, layer.ln1_gain, layer.ln1_bias)
        out = T.add(out, _multi_head(normed, layer, enc.heads, enc.d_k,
                                     sasa, mask))
        normed2 = T.layer_norm(out, layer.ln2_gain, layer.ln2_bias)
        ff = T.add(T.matmul(T.gelu(T.add(T.matmul(normed2, layer.ff1),
                                         layer.ff1_bias)),
                            layer.ff2), layer.ff2_bias)
        out = T.add(out, ff)
    return out
