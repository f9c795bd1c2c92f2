"""Answer scoring: consensus accuracy over ten references and the
normalized Levenshtein similarity, plus corpus evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .data import Sample
from .errors import ContractError, ValidationError
from .noise import edit_distance

__all__ = [
    "normalize_answer", "soft_vote_accuracy", "anls",
    "PredictionRecord", "EvalReport", "score_predictions", "evaluate",
]


def normalize_answer(text: str) -> str:
    """Lowercase and collapse all whitespace runs to single spaces."""
    return " ".join(text.lower().split())


def soft_vote_accuracy(prediction: str, answers: Sequence[str]) -> float:
    """min(matches/3, 1) where matches counts the normalized reference
    answers equal to the normalized prediction.  Requires exactly ten
    references: the score's 3-vote saturation is calibrated to that."""
    if len(answers) != 10:
        raise ContractError(f"expected exactly 10 reference answers, "
                            f"got {len(answers)}")
    pred = normalize_answer(prediction)
    matches = sum(1 for a in answers if normalize_answer(a) == pred)
    return min(matches / 3.0, 1.0)


def anls(prediction: str, answers: Sequence[str],
         threshold: float = 0.5) -> float:
    """Best normalized Levenshtein similarity against the references,
    zeroed below the threshold.  A threshold of 0 disables the cut.
    Similarity of two empty strings is 1."""
    if not answers:
        raise ContractError("anls needs at least one reference answer")
    if not (0.0 <= threshold <= 1.0):
        raise ValidationError(f"threshold must lie in [0, 1], "
                              f"got {threshold}")
    pred = normalize_answer(prediction)
    best = 0.0
    for ref in answers:
        ref_n = normalize_answer(ref)
        denom = max(len(pred), len(ref_n))
        if denom == 0:
            sim = 1.0
        else:
            sim = 1.0 - edit_distance(pred, ref_n) / denom
        best = max(best, sim)
    if threshold > 0.0 and best < threshold:
        return 0.0
    return best


@dataclass(frozen=True)
class PredictionRecord:
    """One decoded answer with its step count and teacher-forced losses."""

    id: str
    answer: str
    steps: int
    loss_pred: float
    loss_kl: float


@dataclass(frozen=True)
class EvalReport:
    """Corpus-level aggregates with per-sample scores.  ``empty`` marks a
    report over zero predictions, whose aggregates are reported as 0."""

    n: int
    accuracy: float
    anls: float
    per_sample: tuple[tuple[str, float, float], ...]
    empty: bool
    mean_loss_pred: float
    records: tuple[PredictionRecord, ...]


def score_predictions(predictions: Sequence[PredictionRecord],
                      samples: Sequence[Sample],
                      anls_threshold: float = 0.5) -> EvalReport:
    """Score prediction records against the corpus carrying their
    reference answers.  Every prediction id must exist in the corpus;
    aggregation is in prediction order."""
    by_id = {s.id: s for s in samples}
    missing = [p.id for p in predictions if p.id not in by_id]
    if missing:
        raise ValidationError(f"predictions reference unknown sample ids: "
                              f"{missing}")
    if not predictions:
        return EvalReport(n=0, accuracy=0.0, anls=0.0, per_sample=(),
                          empty=True, mean_loss_pred=0.0, records=())
    per_sample = []
    acc_sum = 0.0
    anls_sum = 0.0
    loss_sum = 0.0
    for rec in predictions:
        answers = by_id[rec.id].answers
        acc = soft_vote_accuracy(rec.answer, answers)
        sim = anls(rec.answer, answers, anls_threshold)
        per_sample.append((rec.id, acc, sim))
        acc_sum += acc
        anls_sum += sim
        loss_sum += rec.loss_pred
    n = len(predictions)
    return EvalReport(n=n, accuracy=acc_sum / n, anls=anls_sum / n,
                      per_sample=tuple(per_sample), empty=False,
                      mean_loss_pred=loss_sum / n,
                      records=tuple(predictions))


def evaluate(model, samples: Sequence[Sample], anls_threshold: float = 0.5,
             threads: int = 1) -> EvalReport:
    """Greedy-decode every sample and score the results.  Decoding and
    the reported losses run on uncorrupted OCR.  ``threads > 1`` fans
    the per-sample work out over worker threads; aggregation order stays
    the corpus order either way."""
    from . import tensor as T
    from .model import decode_greedy
    from .train import loss_pred as _lp

    if not samples:
        raise ContractError("evaluation corpus is empty")
    if threads < 1:
        raise ContractError(f"threads must be >= 1, got {threads}")

    def one(sample: Sample) -> PredictionRecord:
        answer, steps = decode_greedy(model, sample)
        with T.pause_tape():
            fwd = model.forward_teacher(sample, use_noise=False)
            lp = float(_lp(fwd.logits, fwd.targets).item())
        return PredictionRecord(id=sample.id, answer=answer, steps=steps,
                                loss_pred=lp, loss_kl=0.0)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, samples))
    else:
        records = [one(s) for s in samples]
    return score_predictions(records, samples, anls_threshold)
