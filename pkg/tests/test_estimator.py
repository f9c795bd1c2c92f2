"""The estimator front door: protocol compliance, validation, and the
fit/predict/score loop."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ocrqa.data import Dictionary, OcrToken, Sample, pad_answers
from ocrqa.errors import ValidationError
from ocrqa.estimator import SceneTextAnswerer, check_samples

SMALL_CONFIG = {
    "embed": {"d": 8, "max_question_len": 6, "max_seq": 24, "buckets_2d": 4,
              "max_box_h": 100.0, "max_box_w": 200.0, "vis_dim": 2},
    "attention": {"heads": 2, "d_k": 4, "aoe_layers": 1, "fusion_layers": 1,
                  "rel_range_1d": 4, "rel_range_2d": 2},
    "decoder": {"max_steps": 4},
    "train": {"grid": "2x2", "batch_size": 2, "iterations": 3, "seed": 0},
}


def ocr(text, x0=0.1):
    return OcrToken(text=text, bbox=(x0, 0.1, x0 + 0.1, 0.2, 12.0, 40.0),
                    visual_feature=(0.5, -0.5))


def corpus():
    mk = lambda sid, ans, texts: Sample(
        id=sid, question_tokens=("what", "does", "it", "say"), objects=(),
        ocr_tokens=tuple(ocr(t, x0=0.1 + 0.2 * i)
                         for i, t in enumerate(texts)),
        answers=pad_answers([ans]))
    return [mk("s0001", "stop", ("stop", "here")),
            mk("s0002", "exit", ("exit",)),
            mk("s0003", "open", ("open", "now"))]


# -- input validation -------------------------------------------------------

def test_check_samples_accepts_lists_and_tuples():
    samples = corpus()
    assert check_samples(samples) == samples
    assert check_samples(tuple(samples)) == samples


def test_check_samples_rejects_single_sample():
    with pytest.raises(ValidationError):
        check_samples(corpus()[0])


def test_check_samples_rejects_empty_and_foreign():
    with pytest.raises(ValidationError, match="empty"):
        check_samples([])
    with pytest.raises(ValidationError, match=r"X\[1\]"):
        check_samples([corpus()[0], "not a sample"])
    with pytest.raises(ValidationError):
        check_samples(42)


# -- protocol ---------------------------------------------------------------

def test_get_params_round_trip():
    est = SceneTextAnswerer(config=SMALL_CONFIG, iterations=5, seed=7)
    params = est.get_params()
    assert params["config"] == SMALL_CONFIG
    assert params["iterations"] == 5
    assert params["seed"] == 7
    assert params["dictionary"] is None
    assert params["anls_threshold"] == 0.5
    est.set_params(iterations=9)
    assert est.iterations == 9


def test_clone_preserves_params():
    est = SceneTextAnswerer(config=SMALL_CONFIG, seed=3)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert not hasattr(twin, "model_")


def test_constructor_stores_arguments_untouched():
    import copy
    tree = copy.deepcopy(SMALL_CONFIG)
    tree["train"]["iterations"] = 50
    frozen = copy.deepcopy(tree)
    est = SceneTextAnswerer(config=tree, iterations=2, seed=1)
    assert est.config is tree
    est.fit(corpus())
    # the user's tree is merged, never mutated
    assert tree == frozen
    assert est.config_.train.iterations == 2
    assert est.config_.train.seed == 1


def test_invalid_config_type_rejected():
    est = SceneTextAnswerer(config="not a mapping")
    with pytest.raises(ValidationError):
        est.fit(corpus())


# -- fitting ----------------------------------------------------------------

def test_fit_sets_state_and_returns_self():
    est = SceneTextAnswerer(config=SMALL_CONFIG)
    out = est.fit(corpus())
    assert out is est
    assert est.n_iter_ == 3
    assert len(est.history_) == 3
    assert isinstance(est.vocab_, dict)
    assert "stop" in est.vocab_
    assert isinstance(est.dictionary_, Dictionary)


def test_fit_rejects_labels():
    est = SceneTextAnswerer(config=SMALL_CONFIG)
    with pytest.raises(ValidationError, match="y must be None"):
        est.fit(corpus(), y=["stop", "exit", "open"])


def test_fit_uses_supplied_dictionary():
    words = Dictionary.from_words(["stop", "exit", "open", "here", "now"])
    est = SceneTextAnswerer(config=SMALL_CONFIG, dictionary=words)
    est.fit(corpus())
    assert est.dictionary_ is words


def test_refit_resets_state():
    est = SceneTextAnswerer(config=SMALL_CONFIG)
    est.fit(corpus())
    first = est.model_
    est.fit(corpus())
    assert est.model_ is not first


# -- prediction and scoring -------------------------------------------------

def test_predict_before_fit_raises():
    est = SceneTextAnswerer(config=SMALL_CONFIG)
    with pytest.raises(NotFittedError):
        est.predict(corpus())
    with pytest.raises(NotFittedError):
        est.score(corpus())


def test_predict_returns_one_string_per_sample():
    est = SceneTextAnswerer(config=SMALL_CONFIG).fit(corpus())
    preds = est.predict(corpus())
    assert len(preds) == 3
    assert all(isinstance(p, str) for p in preds)


def test_predict_deterministic_across_fits():
    a = SceneTextAnswerer(config=SMALL_CONFIG, seed=5).fit(corpus())
    b = SceneTextAnswerer(config=SMALL_CONFIG, seed=5).fit(corpus())
    assert a.predict(corpus()) == b.predict(corpus())


def test_score_is_bounded_accuracy():
    est = SceneTextAnswerer(config=SMALL_CONFIG).fit(corpus())
    s = est.score(corpus())
    assert isinstance(s, float)
    assert 0.0 <= s <= 1.0
    with pytest.raises(ValidationError):
        est.score(corpus(), y=["stop"])
