"""Character-level OCR corruption and Bernoulli-gated noise mixing.

Each token is independently corrupted with probability lambda_tok: one
uniformly chosen character operation (delete, insert, or substitute) at a
uniformly chosen position.  If the edited string is a dictionary word it
is kept; otherwise it is replaced by the dictionary word at minimum edit
distance (ties broken lexicographically).  The corrupted text's
embedding delta then perturbs the clean text embedding with the gate
k ~ Bernoulli(lambda_tok) scaling it by (1-lambda)^k * lambda^(1-k).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import AttentionConfig, EmbedConfig, NoiseConfig
from .data import Dictionary, OcrToken, Sample
from .embeddings import EmbeddingTables, embed_ocr, embed_ocr_rest, embed_ocr_text
from .attention import EncoderParams, SasaBias, encoder_forward, sasa_context
from .errors import ConfigError, ShapeError
from .tensor import Tensor

__all__ = [
    "NoiseOutcome", "CHARSET", "corrupt_token", "edit_distance",
    "draw_noise", "corrupt_sample", "derive_seed", "mix_noise", "aoe_forward",
]

CHARSET = "abcdefghijklmnopqrstuvwxyz0123456789"


@dataclass(frozen=True)
class NoiseOutcome:
    """One token's corruption record.  ``in_dictionary`` reports whether
    the raw character edit was already a dictionary word (False means the
    minimum-edit-distance fallback replaced it)."""

    original: str
    corrupted: str
    op_applied: str | None
    in_dictionary: bool
    bernoulli_k: int


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit costs, two-row dynamic program."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1,
                           cur[j - 1] + 1,
                           prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _nearest_word(candidate: str, dictionary: Dictionary) -> str:
    if len(dictionary) == 0:
        raise ConfigError("dictionary fallback requires a non-empty dictionary")
    best = min(dictionary.words,
               key=lambda w: (edit_distance(candidate, w), w))
    return best


def corrupt_token(token: str, dictionary: Dictionary, cfg: NoiseConfig,
                  rng: np.random.Generator) -> NoiseOutcome:
    """Apply at most one character edit, gated by Bernoulli(lambda_tok),
    with dictionary fallback for out-of-dictionary results."""
    if not token:
        raise ConfigError("cannot corrupt an empty token")
    if rng.random() >= cfg.lambda_tok:
        return NoiseOutcome(original=token, corrupted=token, op_applied=None,
                            in_dictionary=token.lower() in dictionary,
                            bernoulli_k=0)
    op = cfg.ops_enabled[int(rng.integers(len(cfg.ops_enabled)))]
    if op == "delete":
        pos = int(rng.integers(len(token)))
        candidate = token[:pos] + token[pos + 1:]
    elif op == "insert":
        pos = int(rng.integers(len(token) + 1))
        ch = CHARSET[int(rng.integers(len(CHARSET)))]
        candidate = token[:pos] + ch + token[pos:]
    else:
        pos = int(rng.integers(len(token)))
        others = [c for c in CHARSET if c != token[pos]]
        ch = others[int(rng.integers(len(others)))]
        candidate = token[:pos] + ch + token[pos + 1:]
    if candidate and candidate.lower() in dictionary:
        return NoiseOutcome(original=token, corrupted=candidate, op_applied=op,
                            in_dictionary=True, bernoulli_k=1)
    corrupted = _nearest_word(candidate.lower(), dictionary)
    return NoiseOutcome(original=token, corrupted=corrupted, op_applied=op,
                        in_dictionary=False, bernoulli_k=1)


def draw_noise(tokens: Sequence[OcrToken], dictionary: Dictionary,
               cfg: NoiseConfig, rng: np.random.Generator) -> list[NoiseOutcome]:
    return [corrupt_token(t.text, dictionary, cfg, rng) for t in tokens]


def derive_seed(global_seed: int, sample_id: str) -> int:
    """Stable per-sample seed, independent of process hash randomization."""
    digest = hashlib.sha256(f"{global_seed}:{sample_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def corrupt_sample(sample: Sample, dictionary: Dictionary, cfg: NoiseConfig
                   ) -> tuple[Sample, list[NoiseOutcome]]:
    """Corrupt a sample's OCR surface strings (boxes and features kept),
    deterministically from (cfg.seed, sample.id)."""
    rng = np.random.default_rng(derive_seed(cfg.seed, sample.id))
    outcomes = draw_noise(sample.ocr_tokens, dictionary, cfg, rng)
    tokens = tuple(replace(tok, text=out.corrupted)
                   for tok, out in zip(sample.ocr_tokens, outcomes))
    return replace(sample, ocr_tokens=tokens), outcomes


def mix_noise(x_txt: Tensor, x_txt_corrupted: Tensor, lambda_tok: float,
              k: Sequence[int]) -> Tensor:
    """Per-token output_i = x_i + delta_i * (1-lambda)^k_i * lambda^(1-k_i)
    with delta the corrupted-minus-clean embedding row."""
    if x_txt.shape != x_txt_corrupted.shape:
        raise ShapeError(f"mix_noise shapes disagree: {x_txt.shape} vs "
                         f"{x_txt_corrupted.shape}")
    karr = np.asarray(k, dtype=np.float64)
    if karr.shape != (x_txt.shape[0],):
        raise ShapeError(f"k must have one entry per row, got {karr.shape} "
                         f"for {x_txt.shape[0]} rows")
    scales = np.power(1.0 - lambda_tok, karr) * np.power(lambda_tok, 1.0 - karr)
    scale_matrix = Tensor(np.repeat(scales[:, None], x_txt.shape[1], axis=1))
    delta = T.sub(x_txt_corrupted, x_txt)
    return T.add(x_txt, T.mul(delta, scale_matrix))


def aoe_forward(tokens: Sequence[OcrToken], tables: EmbeddingTables,
                encoder: EncoderParams, bias: SasaBias,
                noise_cfg: NoiseConfig, embed_cfg: EmbedConfig,
                attn_cfg: AttentionConfig,
                dictionary: Dictionary | None = None,
                rng: np.random.Generator | None = None,
                outcomes: Sequence[NoiseOutcome] | None = None) -> Tensor:
    """The OCR-enhancement stack: noise-mixed text embedding plus visual,
    layout, and position terms, encoded by the spatial-attention stack.

    Pass precomputed ``outcomes`` to reuse one noise draw across several
    forwards; otherwise outcomes are drawn from ``rng`` and
    ``dictionary``.  With token noise disabled the input is exactly the
    plain OCR embedding.
    """
    if noise_cfg.token_noise_enabled and tokens:
        if outcomes is None:
            if dictionary is None or rng is None:
                raise ConfigError("token noise requires a dictionary and rng "
                                  "(or precomputed outcomes)")
            outcomes = draw_noise(tokens, dictionary, noise_cfg, rng)
        if len(outcomes) != len(tokens):
            raise ShapeError(f"{len(outcomes)} outcomes for {len(tokens)} tokens")
        x_txt = embed_ocr_text([t.text for t in tokens], tables, embed_cfg)
        x_corr = embed_ocr_text([o.corrupted for o in outcomes], tables, embed_cfg)
        mixed = mix_noise(x_txt, x_corr, noise_cfg.lambda_tok,
                          [o.bernoulli_k for o in outcomes])
        x = T.add(mixed, embed_ocr_rest(tokens, tables, embed_cfg))
    else:
        x = embed_ocr(tokens, tables, embed_cfg)
    ctx = sasa_context(tokens, bias) if (attn_cfg.sasa_enabled and tokens) else None
    sasa = (ctx, bias) if ctx is not None else None
    return encoder_forward(x, encoder, sasa=sasa)
