"""Multimodal input embeddings: question, visual-object, and OCR rows,
plus their vertical assembly into the fusion transformer's input.

Every segment shares one word table and one hidden size d.  Question rows
sum word + 1D-position + zero-box 2D-layout embeddings.  Object rows are
layer-normed projections of appearance and box vectors plus the label's
word row, with no position terms.  OCR rows sum the word row, a
projection of the token's visual feature, a 2D-layout term bucketized
from the token's box, and a 1D-position term read at index i-1 (clamped
at 0; a config toggle restores index i).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import EmbedConfig
from .data import UNK, OcrToken, VisualObject
from .errors import ShapeError
from .tensor import Tensor

__all__ = [
    "EmbeddingTables", "JointInput", "init_embeddings",
    "embed_question", "embed_objects", "embed_ocr",
    "embed_ocr_text", "embed_ocr_rest", "assemble_input",
    "bucket_index", "box_buckets",
]

# order of the six per-component 2D layout tables
_LAYOUT_KEYS = ("x0", "y0", "x1", "y1", "h", "w")


@dataclass
class EmbeddingTables:
    """All embedding parameters plus the vocabulary that indexes the word
    table."""

    vocab: dict[str, int]
    word: Tensor                       # [V, d]
    pos1d: Tensor                      # [P, d]
    layout2d: dict[str, Tensor]        # six [buckets, d] tables
    obj_proj_fr: Tensor                # [vis_dim, d]
    obj_proj_bx: Tensor                # [obj_box_dim, d]
    ocr_vis_proj: Tensor               # [vis_dim, d]
    obj_ln_fr_gain: Tensor
    obj_ln_fr_bias: Tensor
    obj_ln_bx_gain: Tensor
    obj_ln_bx_bias: Tensor

    def params(self, prefix: str = "embed") -> dict[str, Tensor]:
        out = {f"{prefix}.word": self.word, f"{prefix}.pos1d": self.pos1d}
        for key in _LAYOUT_KEYS:
            out[f"{prefix}.layout2d.{key}"] = self.layout2d[key]
        out[f"{prefix}.obj_proj_fr"] = self.obj_proj_fr
        out[f"{prefix}.obj_proj_bx"] = self.obj_proj_bx
        out[f"{prefix}.ocr_vis_proj"] = self.ocr_vis_proj
        out[f"{prefix}.obj_ln_fr_gain"] = self.obj_ln_fr_gain
        out[f"{prefix}.obj_ln_fr_bias"] = self.obj_ln_fr_bias
        out[f"{prefix}.obj_ln_bx_gain"] = self.obj_ln_bx_gain
        out[f"{prefix}.obj_ln_bx_bias"] = self.obj_ln_bx_bias
        return out


@dataclass(frozen=True)
class JointInput:
    """The fusion transformer's input: stacked segments and their spans,
    ordered question, objects, OCR, decoder."""

    matrix: Tensor
    spans: tuple[tuple[int, int], ...]

    @property
    def q_span(self):
        return self.spans[0]

    @property
    def obj_span(self):
        return self.spans[1]

    @property
    def ocr_span(self):
        return self.spans[2]

    @property
    def dec_span(self):
        return self.spans[3]


def init_embeddings(vocab: dict[str, int], cfg: EmbedConfig,
                    rng: np.random.Generator) -> EmbeddingTables:
    d = cfg.d

    def table(*shape):
        return Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)

    return EmbeddingTables(
        vocab=dict(vocab),
        word=table(len(vocab), d),
        pos1d=table(cfg.max_seq, d),
        layout2d={k: table(cfg.buckets_2d, d) for k in _LAYOUT_KEYS},
        obj_proj_fr=table(cfg.vis_dim, d),
        obj_proj_bx=table(cfg.obj_box_dim, d),
        ocr_vis_proj=table(cfg.vis_dim, d),
        obj_ln_fr_gain=Tensor(np.ones(d), requires_grad=True),
        obj_ln_fr_bias=Tensor(np.zeros(d), requires_grad=True),
        obj_ln_bx_gain=Tensor(np.ones(d), requires_grad=True),
        obj_ln_bx_bias=Tensor(np.zeros(d), requires_grad=True),
    )


def bucket_index(value: float, buckets: int) -> int:
    """Uniform bucket over [0, 1]; out-of-range values clip into the end
    buckets."""
    return int(np.clip(np.floor(value * buckets), 0, buckets - 1))


def box_buckets(bbox: Sequence[float], cfg: EmbedConfig) -> tuple[int, ...]:
    """Bucket indices for the six box components; h and w are first
    normalized by the configured page maxima."""
    x0, y0, x1, y1, h, w = bbox
    values = (x0, y0, x1, y1, h / cfg.max_box_h, w / cfg.max_box_w)
    return tuple(bucket_index(v, cfg.buckets_2d) for v in values)


def _word_index(tables: EmbeddingTables, token: str) -> int:
    return tables.vocab.get(token.lower(), tables.vocab[UNK])


def _empty_rows(d: int) -> Tensor:
    return Tensor(np.zeros((0, d)))


def _layout_term(tables: EmbeddingTables, indices_per_key: dict[str, list[int]]) -> Tensor:
    parts = [T.embedding_lookup(tables.layout2d[k], indices_per_key[k])
             for k in _LAYOUT_KEYS]
    out = parts[0]
    for p in parts[1:]:
        out = T.add(out, p)
    return out


def embed_question(tokens: Sequence[str], tables: EmbeddingTables,
                   cfg: EmbedConfig) -> Tensor:
    """Word + 1D position + zero-box 2D layout, one row per token."""
    n = len(tokens)
    if n == 0:
        return _empty_rows(cfg.d)
    if n > cfg.max_seq:
        raise ShapeError(f"question of {n} tokens exceeds position budget "
                         f"{cfg.max_seq}")
    word_idx = [_word_index(tables, t) for t in tokens]
    out = T.add(T.embedding_lookup(tables.word, word_idx),
                T.embedding_lookup(tables.pos1d, list(range(n))))
    if cfg.layout_2d_enabled:
        zero = {k: [0] * n for k in _LAYOUT_KEYS}
        out = T.add(out, _layout_term(tables, zero))
    return out


def embed_objects(objects: Sequence[VisualObject], tables: EmbeddingTables,
                  cfg: EmbedConfig) -> Tensor:
    """LN(W1 @ appearance) + LN(W2 @ box) + label word row."""
    if not objects:
        return _empty_rows(cfg.d)
    fr = np.array([ob.appearance for ob in objects])
    bx = np.array([ob.bbox for ob in objects])
    if fr.shape[1] != cfg.vis_dim:
        raise ShapeError(f"object appearance dim {fr.shape[1]} != configured "
                         f"{cfg.vis_dim}")
    if bx.shape[1] != cfg.obj_box_dim:
        raise ShapeError(f"object bbox dim {bx.shape[1]} != configured "
                         f"{cfg.obj_box_dim}")
    proj_fr = T.layer_norm(T.matmul(Tensor(fr), tables.obj_proj_fr),
                           tables.obj_ln_fr_gain, tables.obj_ln_fr_bias)
    proj_bx = T.layer_norm(T.matmul(Tensor(bx), tables.obj_proj_bx),
                           tables.obj_ln_bx_gain, tables.obj_ln_bx_bias)
    label_idx = [_word_index(tables, ob.label) for ob in objects]
    labels = T.embedding_lookup(tables.word, label_idx)
    return T.add(T.add(proj_fr, proj_bx), labels)


def embed_ocr_text(texts: Sequence[str], tables: EmbeddingTables,
                   cfg: EmbedConfig) -> Tensor:
    """Just the word rows of OCR surface strings (the part noise touches)."""
    if not texts:
        return _empty_rows(cfg.d)
    return T.embedding_lookup(tables.word, [_word_index(tables, t) for t in texts])


def embed_ocr_rest(tokens: Sequence[OcrToken], tables: EmbeddingTables,
                   cfg: EmbedConfig) -> Tensor:
    """The non-text part of an OCR row: visual projection + 2D layout +
    shifted 1D position."""
    n = len(tokens)
    if n == 0:
        return _empty_rows(cfg.d)
    if n > cfg.max_seq:
        raise ShapeError(f"{n} OCR tokens exceed position budget {cfg.max_seq}")
    vis = np.array([t.visual_feature for t in tokens])
    if vis.shape[1] != cfg.vis_dim:
        raise ShapeError(f"ocr visual dim {vis.shape[1]} != configured {cfg.vis_dim}")
    out = T.matmul(Tensor(vis), tables.ocr_vis_proj)
    if cfg.ocr_pos_shift:
        pos_idx = [max(i - 1, 0) for i in range(n)]
    else:
        pos_idx = list(range(n))
    out = T.add(out, T.embedding_lookup(tables.pos1d, pos_idx))
    if cfg.layout_2d_enabled:
        per_key: dict[str, list[int]] = {k: [] for k in _LAYOUT_KEYS}
        for tok in tokens:
            for key, idx in zip(_LAYOUT_KEYS, box_buckets(tok.bbox, cfg)):
                per_key[key].append(idx)
        out = T.add(out, _layout_term(tables, per_key))
    return out


def embed_ocr(tokens: Sequence[OcrToken], tables: EmbeddingTables,
              cfg: EmbedConfig) -> Tensor:
    """Full OCR rows: word + visual + 2D layout + shifted 1D position."""
    if not tokens:
        return _empty_rows(cfg.d)
    return T.add(embed_ocr_text([t.text for t in tokens], tables, cfg),
                 embed_ocr_rest(tokens, tables, cfg))


def assemble_input(xq: Tensor, xobj: Tensor, xocr: Tensor,
                   xdec: Tensor) -> JointInput:
    """Stack the four segments vertically and record their spans."""
    segments = (xq, xobj, xocr, xdec)
    d = segments[0].shape[1] if segments[0].data.ndim == 2 else None
    for seg in segments:
        if seg.data.ndim != 2 or seg.shape[1] != d:
            raise ShapeError(f"segments must share hidden size, got "
                             f"{[s.shape for s in segments]}")
    spans = []
    start = 0
    for seg in segments:
        spans.append((start, seg.shape[0]))
        start += seg.shape[0]
    nonempty = [s for s in segments if s.shape[0] > 0]
    if not nonempty:
        matrix = _empty_rows(d)
    elif len(nonempty) == 1:
        matrix = nonempty[0]
    else:
        matrix = T.concat(nonempty, axis=0)
    return JointInput(matrix=matrix, spans=tuple(spans))
