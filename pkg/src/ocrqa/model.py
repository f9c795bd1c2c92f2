"""The full answerer: embeddings, the spatial-attention OCR stack, the
fusion transformer, and the iterative decoder, owned by one object whose
parameters live in a flat named dict for checkpointing.

Forward structure per sample: OCR tokens pass through the
noise-enhancement encoder to z_ocr; an optional adversarial tensor is
added to z_ocr; question, object, perturbed-OCR, and decoder segments
stack into the fusion transformer under a mask that hides decoder slots
from everything except later decoder slots; each decoder slot's output
row is scored against the vocabulary and the OCR rows.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import (EncoderParams, SasaBias, additive_mask,
                        encoder_forward, init_encoder, init_sasa_bias)
from .config import RunConfig
from .data import END, Dictionary, Sample
from .decoder import (DecoderParams, DecoderState, Emission, StepScores,
                      choose_answer, dec_input_rows, decode_step,
                      gold_emissions, init_decoder, teacher_targets)
from .embeddings import (EmbeddingTables, assemble_input, embed_objects,
                         embed_ocr, embed_question, init_embeddings)
from .errors import ValidationError
from .noise import NoiseOutcome, aoe_forward
from .tensor import Tensor

__all__ = ["Model", "TeacherForward", "fusion_mask_array", "decode_greedy"]


@dataclass
class TeacherForward:
    """One teacher-forced pass: per-step logits stacked [T, V+L_ocr],
    matching multi-hot targets, and the joint spans."""

    logits: Tensor
    targets: np.ndarray
    spans: tuple[tuple[int, int], ...]
    steps: int


def fusion_mask_array(lq: int, lobj: int, locr: int, ldec: int) -> np.ndarray:
    """Allow-matrix for the fusion stack: non-decoder rows attend all
    non-decoder rows and never any decoder slot; decoder slot t attends
    the non-decoder rows and slots strictly before t."""
    base = lq + lobj + locr
    n = base + ldec
    allowed = np.zeros((n, n), dtype=bool)
    allowed[:base, :base] = True
    for t in range(ldec):
        allowed[base + t, :base] = True
        allowed[base + t, base:base + t] = True
    return allowed


class Model:
    def __init__(self, vocab: dict[str, int], cfg: RunConfig,
                 rng: np.random.Generator | None = None):
        cfg.validate()
        if rng is None:
            rng = np.random.default_rng(cfg.train.seed)
        self.cfg = cfg
        self.tables: EmbeddingTables = init_embeddings(vocab, cfg.embed, rng)
        self.aoe: EncoderParams = init_encoder(
            cfg.attention.aoe_layers, cfg.embed.d, cfg.attention, rng)
        self.fusion: EncoderParams = init_encoder(
            cfg.attention.fusion_layers, cfg.embed.d, cfg.attention, rng)
        self.sasa_bias: SasaBias = init_sasa_bias(cfg.attention)
        self.decoder: DecoderParams = init_decoder(
            len(vocab), cfg.embed.d, cfg.decoder, rng)
        self.inv_vocab = [None] * len(vocab)
        for tok, i in vocab.items():
            self.inv_vocab[i] = tok

    @property
    def vocab(self) -> dict[str, int]:
        return self.tables.vocab

    @property
    def params(self) -> dict[str, Tensor]:
        out = self.tables.params("embed")
        out.update(self.sasa_bias.params("sasa"))
        out.update(self.aoe.params("aoe"))
        out.update(self.fusion.params("fusion"))
        out.update(self.decoder.params("dec"))
        return out

    def apply_params(self, loaded: dict[str, Tensor]) -> None:
        """Copy checkpointed values into this model's tensors; names and
        shapes must match exactly."""
        own = self.params
        missing = sorted(set(own) - set(loaded))
        extra = sorted(set(loaded) - set(own))
        if missing or extra:
            raise ValidationError(f"checkpoint does not match model: "
                                  f"missing {missing[:5]}, extra {extra[:5]}")
        for name, tensor in own.items():
            src = loaded[name]
            if src.shape != tensor.shape:
                raise ValidationError(
                    f"checkpoint parameter {name!r} has shape {src.shape}, "
                    f"model expects {tensor.shape}")
        for name, tensor in own.items():
            tensor.data[...] = loaded[name].data

    # -- forward pieces ----------------------------------------------------

    def encode_ocr(self, sample: Sample,
                   outcomes: list[NoiseOutcome] | None = None,
                   dictionary: Dictionary | None = None,
                   rng: np.random.Generator | None = None,
                   use_noise: bool = True) -> Tensor:
        """z_ocr: the enhancement stack's output.  ``use_noise=False``
        forces the clean path regardless of config (evaluation)."""
        cfg = self.cfg
        noise_cfg = cfg.noise
        if not use_noise:
            noise_cfg = dataclasses.replace(noise_cfg, token_noise_enabled=False)
        return aoe_forward(sample.ocr_tokens, self.tables, self.aoe,
                           self.sasa_bias, noise_cfg, cfg.embed, cfg.attention,
                           dictionary=dictionary, rng=rng, outcomes=outcomes)

    def _fusion_pass(self, sample: Sample, z_ocr: Tensor,
                     dec_prev: list) -> tuple[Tensor, tuple]:
        cfg = self.cfg
        xq = embed_question(sample.question_tokens, self.tables, cfg.embed)
        xobj = embed_objects(sample.objects, self.tables, cfg.embed)
        ocr_clean = embed_ocr(sample.ocr_tokens, self.tables, cfg.embed)
        xdec = dec_input_rows(dec_prev, self.tables,
                              [t.text for t in sample.ocr_tokens],
                              ocr_clean, self.decoder)
        joint = assemble_input(xq, xobj, z_ocr, xdec)
        mask = additive_mask(fusion_mask_array(xq.shape[0], xobj.shape[0],
                                               z_ocr.shape[0], xdec.shape[0]))
        out = encoder_forward(joint.matrix, self.fusion, mask=mask)
        return out, joint.spans

    def forward_teacher(self, sample: Sample,
                        outcomes: list[NoiseOutcome] | None = None,
                        delta: Tensor | None = None,
                        dictionary: Dictionary | None = None,
                        rng: np.random.Generator | None = None,
                        use_noise: bool = True) -> TeacherForward:
        """Teacher-forced pass: decoder slots carry gold tokens; returns
        stacked per-step logits and multi-hot targets."""
        max_steps = self.cfg.decoder.max_steps
        emissions = gold_emissions(choose_answer(sample.answers))[:max_steps]
        z = self.encode_ocr(sample, outcomes=outcomes, dictionary=dictionary,
                            rng=rng, use_noise=use_noise)
        if delta is not None:
            z = T.add(z, delta)
        out, spans = self._fusion_pass(sample, z, list(emissions[:-1]))
        steps = len(emissions)
        rows = []
        for t in range(steps):
            scores = decode_step(out, spans, DecoderState(step=t), self.decoder)
            rows.append(scores.combined)
        logits = rows[0] if steps == 1 else T.concat(rows, axis=0)
        targets = teacher_targets(sample, self.vocab)[:max_steps]
        return TeacherForward(logits=logits, targets=targets, spans=spans,
                              steps=steps)

    def clean_probs(self, sample: Sample,
                    outcomes: list[NoiseOutcome] | None = None) -> np.ndarray:
        """The unperturbed prediction used as the divergence anchor:
        sigmoid of the teacher-forced logits with no adversarial tensor,
        computed off the tape (a constant for gradient purposes)."""
        with T.pause_tape():
            fwd = self.forward_teacher(sample, outcomes=outcomes)
            x = fwd.logits.data
        p = np.empty_like(x)
        pos = x >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        p[~pos] = ex / (1.0 + ex)
        return p


def decode_greedy(model: Model, sample: Sample,
                  max_steps: int | None = None) -> tuple[str, int]:
    """Greedy iterative decoding on the clean path: pick the argmax of
    each step's combined scores, feed its embedding forward, stop at the
    end marker or the step limit.  Pointer picks copy the OCR token's
    exact surface text.  Returns (answer, steps run)."""
    if max_steps is None:
        max_steps = model.cfg.decoder.max_steps
    v = len(model.vocab)
    state = DecoderState()
    steps = 0
    with T.pause_tape():
        z = model.encode_ocr(sample, use_noise=False)
        z_data = Tensor(z.data)
        for t in range(max_steps):
            out, spans = model._fusion_pass(sample, z_data, list(state.emitted))
            scores = decode_step(out, spans, state, model.decoder)
            idx = int(np.argmax(scores.combined.data[0]))
            steps = t + 1
            if idx < v:
                token = model.inv_vocab[idx]
                if token == END:
                    state.finished = True
                    break
                state.emitted.append(Emission(kind="vocab", index=idx,
                                              surface=token))
            else:
                j = idx - v
                state.emitted.append(Emission(
                    kind="ocr", index=j, surface=sample.ocr_tokens[j].text))
            state.step += 1
    return " ".join(e.surface for e in state.emitted), steps
