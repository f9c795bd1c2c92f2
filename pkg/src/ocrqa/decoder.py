"""Iterative answer decoding: per-step scoring of a fixed vocabulary plus
a pointer over the fusion transformer's OCR output rows.

Decoder slot t holds the embedding of the previous emission (a learned
begin row at t=0) plus a per-step position row.  The slot's fusion output
row feeds a linear vocabulary head and a scaled dot-product pointer
against the projected OCR rows; the concatenation of both logit blocks
is trained as multi-label binary classification, because a gold token
may be creditable to the vocabulary and to several OCR positions at
once.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import DecoderConfig
from .data import BEGIN, END, UNK, Sample, tokenize
from .embeddings import EmbeddingTables
from .errors import ContractError, ShapeError
from .tensor import Tensor

__all__ = [
    "DecoderParams", "DecoderState", "StepScores", "Emission",
    "init_decoder", "choose_answer", "gold_emissions", "teacher_targets",
    "dec_input_rows", "decode_step",
]

NEG_INF = float("-inf")


@dataclass
class DecoderParams:
    dec_pos: Tensor       # [max_steps, d]
    vocab_w: Tensor       # [d, V]
    vocab_b: Tensor       # [V]
    ptr_dec: Tensor       # [d, d] projects the decoder-slot output row
    ptr_ocr: Tensor       # [d, d] projects the fusion OCR output rows

    def params(self, prefix: str = "dec") -> dict[str, Tensor]:
        return {f"{prefix}.{name}": getattr(self, name)
                for name in ("dec_pos", "vocab_w", "vocab_b", "ptr_dec",
                             "ptr_ocr")}


@dataclass(frozen=True)
class Emission:
    """One decoding emission: either a vocabulary entry or an OCR pointer,
    with the surface string it contributes to the answer."""

    kind: str             # "vocab" or "ocr"
    index: int            # vocabulary id, or OCR position
    surface: str


@dataclass
class DecoderState:
    step: int = 0
    emitted: list[Emission] = field(default_factory=list)
    finished: bool = False


@dataclass
class StepScores:
    vocab_logits: Tensor     # [1, V]
    pointer_logits: Tensor   # [1, L_ocr] (or padded width)
    combined: Tensor         # [1, V + L_ocr]


def init_decoder(vocab_size: int, d: int, cfg: DecoderConfig,
                 rng: np.random.Generator) -> DecoderParams:
    def weight(rows, cols):
        return Tensor(rng.normal(0.0, 0.02, size=(rows, cols)), requires_grad=True)

    return DecoderParams(
        dec_pos=weight(cfg.max_steps, d),
        vocab_w=weight(d, vocab_size),
        vocab_b=Tensor(np.zeros(vocab_size), requires_grad=True),
        ptr_dec=weight(d, d),
        ptr_ocr=weight(d, d))


def choose_answer(answers: tuple[str, ...]) -> str:
    """The teacher-forcing target: most frequent answer, ties broken by
    the lexicographically smallest string."""
    counts = Counter(answers)
    return min(counts, key=lambda a: (-counts[a], a))


def gold_emissions(answer: str) -> tuple[str, ...]:
    """The token sequence the decoder is trained to emit: the answer's
    tokens followed by the end marker."""
    return tokenize(answer) + (END,)


def _ocr_matches(token: str, ocr_texts: tuple[str, ...]) -> list[int]:
    return [j for j, t in enumerate(ocr_texts) if t.lower() == token]


def teacher_targets(sample: Sample, vocab: dict[str, int],
                    pad_to: int | None = None) -> np.ndarray:
    """Multi-hot targets [T, V + L] over the vocabulary and OCR positions:
    step t credits the gold token's vocabulary entry and every OCR
    position whose surface matches case-insensitively; a token with no
    source anywhere credits the unknown entry."""
    ocr_texts = tuple(t.text for t in sample.ocr_tokens)
    width_ocr = len(ocr_texts) if pad_to is None else pad_to
    if width_ocr < len(ocr_texts):
        raise ShapeError(f"pad_to={pad_to} is smaller than the sample's "
                         f"{len(ocr_texts)} OCR tokens")
    v = len(vocab)
    emissions = gold_emissions(choose_answer(sample.answers))
    targets = np.zeros((len(emissions), v + width_ocr))
    for t, gold in enumerate(emissions):
        hits = 0
        if gold in vocab:
            targets[t, vocab[gold]] = 1.0
            hits += 1
        for j in _ocr_matches(gold, ocr_texts):
            targets[t, v + j] = 1.0
            hits += 1
        if hits == 0:
            targets[t, vocab[UNK]] = 1.0
    return targets


def dec_input_rows(prev_tokens: list[Emission | str], tables: EmbeddingTables,
                   ocr_texts: list[str], ocr_clean_embed: Tensor,
                   dec: DecoderParams) -> Tensor:
    """Embeddings for decoder slots 0..T-1.  Slot 0 is the begin word row;
    slot t is the embedding of emission t-1: a pointer emission feeds the
    pointed-at OCR token's clean input embedding row, a vocabulary
    emission its word row.  A gold string (teacher forcing) tries the
    vocabulary first, then the first case-insensitive OCR match's clean
    row, then the unknown row.  A per-step position row is added to every
    slot.
    """
    t_total = len(prev_tokens) + 1
    if t_total > dec.dec_pos.shape[0]:
        raise ContractError(f"{t_total} decoder slots exceed max_steps "
                            f"{dec.dec_pos.shape[0]}")
    rows = [T.embedding_lookup(tables.word, [tables.vocab[BEGIN]])]
    for prev in prev_tokens:
        if isinstance(prev, Emission) and prev.kind == "ocr":
            rows.append(T.slice_axis(ocr_clean_embed, 0, prev.index, 1))
            continue
        token = prev.surface if isinstance(prev, Emission) else prev
        key = token.lower()
        if key in tables.vocab:
            rows.append(T.embedding_lookup(tables.word, [tables.vocab[key]]))
            continue
        matches = _ocr_matches(key, tuple(ocr_texts))
        if matches:
            rows.append(T.slice_axis(ocr_clean_embed, 0, matches[0], 1))
        else:
            rows.append(T.embedding_lookup(tables.word, [tables.vocab[UNK]]))
    stacked = rows[0] if t_total == 1 else T.concat(rows, axis=0)
    pos = T.embedding_lookup(dec.dec_pos, list(range(t_total)))
    return T.add(stacked, pos)


def decode_step(joint_output: Tensor, spans, state: DecoderState,
                dec: DecoderParams, pad_to: int | None = None) -> StepScores:
    """Scores for the current step from the fusion output: vocabulary
    logits from the decoder slot's row, pointer logits against the OCR
    rows, padded with non-trainable -inf when a fixed width is requested.
    """
    if state.finished:
        raise ContractError("decode_step on a finished state")
    if state.step >= dec.dec_pos.shape[0]:
        raise ContractError(f"decoding past max_steps={dec.dec_pos.shape[0]}")
    ocr_start, ocr_len = spans[2]
    dec_start, dec_len = spans[3]
    if state.step >= dec_len:
        raise ContractError(f"step {state.step} has no decoder slot "
                            f"(segment holds {dec_len})")
    slot = T.slice_axis(joint_output, 0, dec_start + state.step, 1)
    vocab_logits = T.add(T.matmul(slot, dec.vocab_w), dec.vocab_b)

    d = joint_output.shape[1]
    if ocr_len > 0:
        ocr_rows = T.slice_axis(joint_output, 0, ocr_start, ocr_len)
        q = T.matmul(slot, dec.ptr_dec)
        k = T.matmul(ocr_rows, dec.ptr_ocr)
        pointer = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d))
    else:
        pointer = Tensor(np.zeros((1, 0)))
    if pad_to is not None:
        if pad_to < ocr_len:
            raise ShapeError(f"pad_to={pad_to} is smaller than {ocr_len} OCR rows")
        if pad_to > ocr_len:
            pad = Tensor(np.full((1, pad_to - ocr_len), NEG_INF))
            pointer = T.concat([pointer, pad], axis=1)
    combined = T.concat([vocab_logits, pointer], axis=1) \
        if pointer.shape[1] else vocab_logits
    return StepScores(vocab_logits=vocab_logits, pointer_logits=pointer,
                      combined=combined)
