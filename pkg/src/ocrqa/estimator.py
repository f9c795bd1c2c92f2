"""Estimator front door: fit on a list of question records, predict
answer strings, score with the consensus metric.

The class follows the scikit-learn protocol (constructor stores its
arguments untouched, ``fit`` returns ``self``, fitted state lives in
trailing-underscore attributes) so it composes with that ecosystem's
model-selection utilities.
"""

from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import config_from_dict
from .data import Dictionary, Sample, default_dictionary, vocab_build
from .errors import ValidationError
from .metrics import evaluate
from .model import Model, decode_greedy
from .train import train_loop

__all__ = ["SceneTextAnswerer", "check_samples"]


def check_samples(X) -> list[Sample]:
    """Validate that X is a non-empty sequence of corpus records."""
    if isinstance(X, Sample):
        raise ValidationError("X must be a sequence of samples, not a "
                              "single sample")
    try:
        samples = list(X)
    except TypeError as e:
        raise ValidationError(f"X must be an iterable of samples: {e}") from e
    if not samples:
        raise ValidationError("X is empty")
    for i, s in enumerate(samples):
        if not isinstance(s, Sample):
            raise ValidationError(f"X[{i}] is {type(s).__name__}, expected "
                                  f"a Sample")
    return samples


class SceneTextAnswerer(BaseEstimator):
    """Answer questions about text in images, reading from OCR tokens.

    Parameters
    ----------
    config : dict or None
        Nested configuration tree merged over the built-in defaults
        (sections: embed, attention, noise, adv, decoder, train,
        ablation).
    iterations : int or None
        Training iterations; overrides the config value when given.
    seed : int or None
        Training seed; overrides the config value when given.
    dictionary : Dictionary or None
        Word list consulted by the character-noise channel; the packaged
        list is used when None.
    anls_threshold : float
        Similarity cutoff used by ``score``'s ANLS aggregate.
    """

    def __init__(self, config: dict | None = None,
                 iterations: int | None = None, seed: int | None = None,
                 dictionary: Dictionary | None = None,
                 anls_threshold: float = 0.5):
        self.config = config
        self.iterations = iterations
        self.seed = seed
        self.dictionary = dictionary
        self.anls_threshold = anls_threshold

    def _resolved_config(self):
        tree = copy.deepcopy(self.config) if self.config is not None else {}
        if not isinstance(tree, dict):
            raise ValidationError("config must be a mapping or None")
        if self.iterations is not None:
            tree.setdefault("train", {})["iterations"] = int(self.iterations)
        if self.seed is not None:
            tree.setdefault("train", {})["seed"] = int(self.seed)
        return config_from_dict(tree)

    def fit(self, X, y=None):
        """Train on a sequence of samples.  Answers travel with the
        samples, so ``y`` is accepted only for protocol compatibility and
        must be None."""
        if y is not None:
            raise ValidationError("y must be None: reference answers are "
                                  "part of each sample")
        samples = check_samples(X)
        cfg = self._resolved_config()
        rng = np.random.default_rng(cfg.train.seed)
        dictionary = (self.dictionary if self.dictionary is not None
                      else default_dictionary())
        model = Model(vocab_build(samples), cfg, rng=rng)
        history = train_loop(model, samples, dictionary,
                             cfg.train.iterations, rng)
        self.model_ = model
        self.config_ = cfg
        self.vocab_ = model.vocab
        self.dictionary_ = dictionary
        self.history_ = history
        self.n_iter_ = len(history)
        return self

    def predict(self, X) -> list[str]:
        """Greedy-decoded answer string for each sample."""
        check_is_fitted(self, "model_")
        return [decode_greedy(self.model_, s)[0] for s in check_samples(X)]

    def score(self, X, y=None) -> float:
        """Mean consensus accuracy over the samples' reference answers."""
        check_is_fitted(self, "model_")
        if y is not None:
            raise ValidationError("y must be None: reference answers are "
                                  "part of each sample")
        report = evaluate(self.model_, check_samples(X),
                          anls_threshold=self.anls_threshold)
        return report.accuracy
