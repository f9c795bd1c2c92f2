"""Scene-text question answering at desk scale: a float64 autodiff
core, spatial-aware attention over OCR layout, character-noise
augmentation, adversarial training on the OCR representation, and
pointer-based answer decoding.

The quickest entry points are :class:`SceneTextAnswerer` (scikit-learn
style fit/predict) and the ``ocrqa`` command line.
"""

from .checkpoint import load_params, save_params
from .config import (AdvConfig, AttentionConfig, DecoderConfig, EmbedConfig,
                     NoiseConfig, RunConfig, TrainConfig, config_hash,
                     load_config)
from .data import (Dictionary, OcrToken, Sample, VisualObject,
                   default_dictionary, load_corpus, load_dictionary,
                   pad_answers, synth_generate, tokenize, vocab_build,
                   write_corpus)
from .errors import (ConfigError, ContractError, NumericalError, ShapeError,
                     ValidationError)
from .estimator import SceneTextAnswerer
from .metrics import (EvalReport, PredictionRecord, anls, evaluate,
                      normalize_answer, score_predictions,
                      soft_vote_accuracy)
from .model import Model, decode_greedy
from .noise import (NoiseOutcome, aoe_forward, corrupt_sample, corrupt_token,
                    edit_distance, mix_noise)
from .tensor import Tape, Tensor, backward, pause_tape
from .train import train_loop, train_step

__version__ = "0.1.0"

__all__ = [
    "SceneTextAnswerer", "Model", "decode_greedy",
    "Tensor", "Tape", "pause_tape", "backward",
    "Sample", "OcrToken", "VisualObject", "Dictionary",
    "synth_generate", "load_corpus", "write_corpus", "vocab_build",
    "tokenize", "pad_answers", "load_dictionary", "default_dictionary",
    "NoiseOutcome", "corrupt_token", "corrupt_sample", "mix_noise",
    "aoe_forward", "edit_distance",
    "train_step", "train_loop", "evaluate", "score_predictions",
    "EvalReport", "PredictionRecord", "normalize_answer",
    "soft_vote_accuracy", "anls",
    "save_params", "load_params",
    "RunConfig", "EmbedConfig", "AttentionConfig", "NoiseConfig",
    "AdvConfig", "DecoderConfig", "TrainConfig", "load_config",
    "config_hash",
    "ShapeError", "ContractError", "NumericalError", "ValidationError",
    "ConfigError",
    "__version__",
]
