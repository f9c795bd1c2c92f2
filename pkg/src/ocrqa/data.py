"""Sample schema, corpus serialization, synthetic scene generation, and
token vocabularies.

A corpus is UTF-8 line-delimited JSON, one record per line with fields
``id, question, objects, ocr, answers``.  OCR boxes are six floats in the
order (x0/w, y0/h, x1/w, y1/h, h, w): normalized corner coordinates
followed by the box's unnormalized height and width.  Every sample
carries exactly 10 reference answers; the loader pads shorter lists by
repetition.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

__all__ = [
    "PAD", "BEGIN", "END", "UNK", "SPECIALS", "ANSWERS_PER_SAMPLE",
    "PAGE_W", "PAGE_H",
    "OcrToken", "VisualObject", "Sample", "Dictionary",
    "tokenize", "pad_answers", "load_corpus", "write_corpus",
    "synth_generate", "vocab_build", "load_dictionary", "default_dictionary",
]

PAD = "<pad>"
BEGIN = "<begin>"
END = "<end>"
UNK = "<unk>"
SPECIALS = (PAD, BEGIN, END, UNK)

ANSWERS_PER_SAMPLE = 10

# synthetic page geometry (pixels); box h/w stay in these units
PAGE_W = 320.0
PAGE_H = 240.0


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase whitespace tokenization, the scheme used everywhere a
    string meets the vocabulary."""
    return tuple(text.lower().split())


@dataclass(frozen=True)
class OcrToken:
    """One recognized text fragment: surface string, box, and a visual
    feature standing in for a detector's appearance vector."""

    text: str
    bbox: tuple[float, ...]
    visual_feature: tuple[float, ...]

    def __post_init__(self):
        if not self.text:
            raise ValidationError("ocr token text must be non-empty")
        b = self.bbox
        if len(b) != 6:
            raise ValidationError(f"ocr bbox must have 6 entries, got {len(b)}")
        if not all(np.isfinite(b)):
            raise ValidationError("ocr bbox entries must be finite")
        x0, y0, x1, y1, h, w = b
        if not (0.0 <= x0 <= x1 <= 1.0):
            raise ValidationError(f"ocr bbox x order violated: x0={x0}, x1={x1}")
        if not (0.0 <= y0 <= y1 <= 1.0):
            raise ValidationError(f"ocr bbox y order violated: y0={y0}, y1={y1}")
        if not (h > 0.0 and w > 0.0):
            raise ValidationError(f"ocr bbox h/w must be positive, got h={h}, w={w}")


@dataclass(frozen=True)
class VisualObject:
    """A detected object: appearance vector, box vector, and a label word."""

    label: str
    appearance: tuple[float, ...]
    bbox: tuple[float, ...]

    def __post_init__(self):
        if not self.label:
            raise ValidationError("object label must be non-empty")
        if not self.appearance:
            raise ValidationError("object appearance vector must be non-empty")
        if not self.bbox:
            raise ValidationError("object bbox vector must be non-empty")
        if not (all(np.isfinite(self.appearance)) and all(np.isfinite(self.bbox))):
            raise ValidationError("object vectors must be finite")


@dataclass(frozen=True)
class Sample:
    id: str
    question_tokens: tuple[str, ...]
    objects: tuple[VisualObject, ...]
    ocr_tokens: tuple[OcrToken, ...]
    answers: tuple[str, ...]

    def __post_init__(self):
        if not self.id:
            raise ValidationError("sample id must be non-empty")
        if len(self.answers) != ANSWERS_PER_SAMPLE:
            raise ValidationError(
                f"sample must carry exactly {ANSWERS_PER_SAMPLE} answers, "
                f"got {len(self.answers)}")
        if any(not a for a in self.answers):
            raise ValidationError("answers must be non-empty strings")
        if any(not t for t in self.question_tokens):
            raise ValidationError("question tokens must be non-empty")


@dataclass(frozen=True)
class Dictionary:
    """A sorted, duplicate-free set of lowercase words."""

    words: tuple[str, ...]

    def __post_init__(self):
        if not self.words:
            raise ValidationError("dictionary must be non-empty")
        for i, w in enumerate(self.words):
            if not w or w != w.lower():
                raise ValidationError(f"dictionary word {w!r} is not lowercase")
            if i and self.words[i - 1] >= w:
                raise ValidationError("dictionary words must be sorted and unique")
        object.__setattr__(self, "_set", frozenset(self.words))

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Dictionary":
        return cls(tuple(sorted({w.lower() for w in words if w})))

    def __contains__(self, word: str) -> bool:
        return word in self._set

    def __len__(self) -> int:
        return len(self.words)


def pad_answers(answers: Sequence[str]) -> tuple[str, ...]:
    """Pad to exactly 10 answers by cyclic repetition."""
    if not answers:
        raise ValidationError("answers list must be non-empty")
    if len(answers) > ANSWERS_PER_SAMPLE:
        raise ValidationError(f"at most {ANSWERS_PER_SAMPLE} answers allowed, "
                              f"got {len(answers)}")
    out = list(answers)
    while len(out) < ANSWERS_PER_SAMPLE:
        out.append(answers[len(out) % len(answers)])
    return tuple(out)


# ---------------------------------------------------------------------------
# corpus IO

_SAMPLE_FIELDS = {"id", "question", "objects", "ocr", "answers"}


def _float_tuple(value, where: str) -> tuple[float, ...]:
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
        raise ValidationError(f"{where}: expected a list of numbers")
    return tuple(float(v) for v in value)


def _sample_from_record(rec, max_question_len: int | None) -> Sample:
    if not isinstance(rec, dict):
        raise ValidationError("record is not a JSON object")
    unknown = set(rec) - _SAMPLE_FIELDS
    if unknown:
        raise ValidationError(f"unknown fields {sorted(unknown)}")
    missing = _SAMPLE_FIELDS - set(rec)
    if missing:
        raise ValidationError(f"missing fields {sorted(missing)}")
    if not isinstance(rec["id"], str):
        raise ValidationError("id: expected a string")
    if not isinstance(rec["question"], str):
        raise ValidationError("question: expected a string")
    tokens = tokenize(rec["question"])
    if max_question_len is not None and len(tokens) > max_question_len:
        raise ValidationError(f"question: {len(tokens)} tokens exceeds the "
                              f"limit of {max_question_len}")

    objects = []
    if not isinstance(rec["objects"], list):
        raise ValidationError("objects: expected a list")
    for i, ob in enumerate(rec["objects"]):
        where = f"objects[{i}]"
        if not isinstance(ob, dict) or set(ob) != {"label", "appearance", "bbox"}:
            raise ValidationError(f"{where}: expected label/appearance/bbox")
        if not isinstance(ob["label"], str):
            raise ValidationError(f"{where}.label: expected a string")
        try:
            objects.append(VisualObject(
                label=ob["label"],
                appearance=_float_tuple(ob["appearance"], f"{where}.appearance"),
                bbox=_float_tuple(ob["bbox"], f"{where}.bbox")))
        except ValidationError as e:
            raise ValidationError(f"{where}: {e}") from e

    ocr = []
    if not isinstance(rec["ocr"], list):
        raise ValidationError("ocr: expected a list")
    for i, tok in enumerate(rec["ocr"]):
        where = f"ocr[{i}]"
        if not isinstance(tok, dict) or set(tok) != {"text", "bbox", "visual_feature"}:
            raise ValidationError(f"{where}: expected text/bbox/visual_feature")
        if not isinstance(tok["text"], str):
            raise ValidationError(f"{where}.text: expected a string")
        try:
            ocr.append(OcrToken(
                text=tok["text"],
                bbox=_float_tuple(tok["bbox"], f"{where}.bbox"),
                visual_feature=_float_tuple(tok["visual_feature"],
                                            f"{where}.visual_feature")))
        except ValidationError as e:
            raise ValidationError(f"{where}: {e}") from e

    answers = rec["answers"]
    if not isinstance(answers, list) or not all(isinstance(a, str) for a in answers):
        raise ValidationError("answers: expected a list of strings")

    return Sample(id=rec["id"], question_tokens=tokens, objects=tuple(objects),
                  ocr_tokens=tuple(ocr), answers=pad_answers(answers))


def load_corpus(path, max_question_len: int | None = 20) -> list[Sample]:
    """Read and validate a line-delimited JSON corpus; errors carry the
    line number and the violated field."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: not valid JSON: {e}") from e
            try:
                samples.append(_sample_from_record(rec, max_question_len))
            except ValidationError as e:
                raise ValidationError(f"{path}:{lineno}: {e}") from e
    return samples


def write_corpus(path, samples: Sequence[Sample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            rec = {
                "id": s.id,
                "question": " ".join(s.question_tokens),
                "objects": [{"label": ob.label,
                             "appearance": list(ob.appearance),
                             "bbox": list(ob.bbox)} for ob in s.objects],
                "ocr": [{"text": t.text,
                         "bbox": list(t.bbox),
                         "visual_feature": list(t.visual_feature)}
                        for t in s.ocr_tokens],
                "answers": list(s.answers),
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# synthetic scenes

GENERATOR_WORDS = (
    "apple", "bird", "book", "cake", "cat", "coin", "corn", "desk", "dog",
    "door", "duck", "fish", "flag", "frog", "gate", "hill", "kite", "lamp",
    "leaf", "lion", "milk", "moon", "nest", "pear", "rice", "ring", "rock",
    "rose", "salt", "sand", "ship", "shoe", "star", "sun", "tree", "vine",
    "wolf", "wood",
)
OBJECT_LABELS = ("sign", "board", "poster", "panel")
_CORNERS = ("top left", "top right", "bottom left", "bottom right")


def _parse_grid(grid: str) -> tuple[int, int]:
    parts = grid.lower().split("x")
    if len(parts) != 2:
        raise ValidationError(f"grid spec must look like '3x3', got {grid!r}")
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except ValueError as e:
        raise ValidationError(f"grid spec must look like '3x3', got {grid!r}") from e
    if rows < 1 or cols < 1:
        raise ValidationError(f"grid dimensions must be positive, got {grid!r}")
    return rows, cols


def _cell_box(rng, row: int, col: int, rows: int, cols: int) -> tuple[float, ...]:
    cw = PAGE_W / cols
    ch = PAGE_H / rows
    fx0 = rng.uniform(0.05, 0.25)
    fx1 = rng.uniform(0.70, 0.95)
    fy0 = rng.uniform(0.05, 0.25)
    fy1 = rng.uniform(0.70, 0.95)
    x0, x1 = (col + fx0) * cw, (col + fx1) * cw
    y0, y1 = (row + fy0) * ch, (row + fy1) * ch
    return (x0 / PAGE_W, y0 / PAGE_H, x1 / PAGE_W, y1 / PAGE_H, y1 - y0, x1 - x0)


def synth_generate(seed: int, n: int, grid: str = "3x3",
                   vis_dim: int = 16) -> list[Sample]:
    """Deterministic synthetic scenes: a grid of distinct words (one cell
    holds a number), a templated question, and 10 copies of the unique
    answer.  Every answer equals some OCR token's surface text, so the
    pointer path alone can always produce it."""
    if n < 1:
        raise ValidationError(f"sample count must be >= 1, got {n}")
    rows, cols = _parse_grid(grid)
    cells = rows * cols
    if cells - 1 > len(GENERATOR_WORDS):
        raise ValidationError(f"grid {grid!r} needs {cells - 1} distinct words, "
                              f"only {len(GENERATOR_WORDS)} available")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        number_cell = int(rng.integers(cells))
        words = list(rng.choice(GENERATOR_WORDS, size=cells - 1, replace=False))
        number = str(int(rng.integers(0, 100)))
        texts = words[:number_cell] + [number] + words[number_cell:]

        ocr = []
        for cell in range(cells):
            r, c = divmod(cell, cols)
            ocr.append(OcrToken(
                text=texts[cell],
                bbox=_cell_box(rng, r, c, rows, cols),
                visual_feature=tuple(rng.standard_normal(vis_dim))))

        corner_cells = {0: 0, 1: cols - 1, 2: (rows - 1) * cols, 3: cells - 1}
        template = int(rng.integers(3))
        if template == 0:
            choices = [k for k, cell in corner_cells.items() if cell != number_cell]
            pick = choices[int(rng.integers(len(choices)))] if choices else None
            if pick is None:
                template = 1
            else:
                question = f"what is the word in the {_CORNERS[pick]}"
                answer = texts[corner_cells[pick]]
        if template == 2:
            pairs = [cell for cell in range(cells)
                     if (cell % cols) < cols - 1
                     and cell != number_cell and cell + 1 != number_cell]
            if pairs:
                anchor = pairs[int(rng.integers(len(pairs)))]
                question = f"what word is right of {texts[anchor]}"
                answer = texts[anchor + 1]
            else:
                template = 1
        if template == 1:
            question = "what number is on the sign"
            answer = number

        n_obj = int(rng.integers(1, 4))
        objects = []
        for _ in range(n_obj):
            label = OBJECT_LABELS[int(rng.integers(len(OBJECT_LABELS)))]
            x0, x1 = sorted(rng.uniform(0.0, 1.0, size=2))
            y0, y1 = sorted(rng.uniform(0.0, 1.0, size=2))
            objects.append(VisualObject(
                label=label,
                appearance=tuple(rng.standard_normal(vis_dim)),
                bbox=(float(x0), float(y0), float(x1), float(y1))))

        samples.append(Sample(
            id=f"synth-{seed}-{i}",
            question_tokens=tokenize(question),
            objects=tuple(objects),
            ocr_tokens=tuple(ocr),
            answers=(answer,) * ANSWERS_PER_SAMPLE))
    return samples


# ---------------------------------------------------------------------------
# vocabulary

def vocab_build(samples: Sequence[Sample], min_freq: int = 1) -> dict[str, int]:
    """Token-to-index map over question words, object labels, OCR texts,
    and answer tokens.  Specials occupy 0..3; the rest sort by
    (-frequency, lexicographic)."""
    if not samples:
        raise ValidationError("vocab_build requires a non-empty sample list")
    counts: Counter[str] = Counter()
    for s in samples:
        counts.update(s.question_tokens)
        counts.update(ob.label.lower() for ob in s.objects)
        counts.update(t.text.lower() for t in s.ocr_tokens)
        for a in s.answers:
            counts.update(tokenize(a))
    vocab = {tok: i for i, tok in enumerate(SPECIALS)}
    kept = [t for t, c in counts.items() if c >= min_freq and t not in vocab]
    for tok in sorted(kept, key=lambda t: (-counts[t], t)):
        vocab[tok] = len(vocab)
    return vocab


# ---------------------------------------------------------------------------
# dictionary

def load_dictionary(path) -> Dictionary:
    with open(path, encoding="utf-8") as fh:
        words = [line.strip() for line in fh if line.strip()]
    return Dictionary.from_words(words)


def default_dictionary() -> Dictionary:
    """The packaged wordlist: generator words, labels, question words,
    number strings, and assorted common words."""
    text = resources.files("ocrqa").joinpath("resources/words.txt").read_text("utf-8")
    return Dictionary.from_words(w for w in text.split("\n") if w.strip())
