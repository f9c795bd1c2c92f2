"""Adversarial training: K-step projected-gradient crafting of an OCR
perturbation, gradient accumulation across the ascent steps, and the
combined prediction + divergence objective.

One train step over a batch:
  1. draw each sample's noise outcomes once (frozen for the whole step)
     and initialize the batch perturbation delta uniformly inside the
     Frobenius ball, with padded rows zeroed;
  2. for each of K ascent steps: run the perturbed teacher-forced forward
     per sample, take the prediction loss plus the weighted symmetric
     divergence against the unperturbed prediction (recomputed each step
     as a constant anchor), and backpropagate once — the same sweep
     yields both the parameter gradients (summed into the accumulator)
     and the delta gradient (normalized-ascent + projection update);
  3. scale the accumulated parameter gradient by 1/(K*batch) and hand it
     to the optimizer.

With the adversarial branch disabled the step is a plain teacher-forced
gradient step on the prediction loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import AdvConfig, RunConfig
from .data import Dictionary, Sample
from .errors import ConfigError, NumericalError
from .model import Model
from .noise import NoiseOutcome, draw_noise
from .tensor import Tensor

__all__ = [
    "init_delta", "pgd_ascend", "loss_pred", "loss_kl",
    "warmup_factor", "make_optimizer", "SgdOptimizer", "AdamWOptimizer",
    "train_step", "train_loop", "StepDiagnostics",
]


# ---------------------------------------------------------------------------
# losses (thin fronts over the fused tensor ops)

def loss_pred(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against multi-hot
    targets."""
    return T.bce_with_logits(logits, Tensor(targets))


def loss_kl(p_adv: Tensor, p_clean: np.ndarray) -> Tensor:
    """Mean symmetric per-label Bernoulli divergence; the clean side is a
    constant anchor."""
    return T.bernoulli_symmetric_kl(p_adv, Tensor(p_clean))


# ---------------------------------------------------------------------------
# perturbation mechanics

def init_delta(shape: tuple[int, ...], lambda_adv: float,
               rng: np.random.Generator) -> np.ndarray:
    """Elementwise U(-lambda, lambda) scaled by 1/sqrt(N): the result
    always starts inside the Frobenius ball."""
    n = int(np.prod(shape))
    if n < 1:
        raise ConfigError(f"delta must have at least one element, got {shape}")
    return rng.uniform(-lambda_adv, lambda_adv, size=shape) / math.sqrt(n)


def pgd_ascend(delta: np.ndarray, grad: np.ndarray, alpha: float,
               lambda_adv: float) -> np.ndarray:
    """One normalized-gradient ascent step followed by projection onto
    the Frobenius ball; a zero gradient skips the step."""
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite perturbation gradient")
    gnorm = float(np.sqrt((grad * grad).sum()))
    if gnorm == 0.0:
        return delta
    out = delta + alpha * grad / gnorm
    norm = float(np.sqrt((out * out).sum()))
    if norm > lambda_adv:
        out = out * (lambda_adv / norm)
    return out


# ---------------------------------------------------------------------------
# optimizers with linear learning-rate warmup

def warmup_factor(iteration: int, cfg: AdvConfig) -> float:
    """Linear ramp from warmup_start at iteration 0 to 1.0 at
    warmup_iters and beyond."""
    w = cfg.warmup_iters
    if w <= 0 or iteration >= w:
        return 1.0
    return cfg.warmup_start + (1.0 - cfg.warmup_start) * iteration / w


class SgdOptimizer:
    """theta <- theta - lr * g, the literal descent rule."""

    def __init__(self, cfg: AdvConfig):
        self.cfg = cfg

    def lr(self, iteration: int) -> float:
        return self.cfg.tau * warmup_factor(iteration, self.cfg)

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray],
             iteration: int) -> None:
        lr = self.lr(iteration)
        for name, g in grads.items():
            params[name].data -= lr * g


class AdamWOptimizer:
    """Decoupled weight decay Adam: beta (0.9, 0.999), eps 1e-8, decay
    0.01 applied directly to the parameter."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8
    WEIGHT_DECAY = 0.01

    def __init__(self, cfg: AdvConfig):
        self.cfg = cfg
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def lr(self, iteration: int) -> float:
        return self.cfg.tau * warmup_factor(iteration, self.cfg)

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray],
             iteration: int) -> None:
        lr = self.lr(iteration)
        self.t += 1
        c1 = 1.0 - self.BETA1 ** self.t
        c2 = 1.0 - self.BETA2 ** self.t
        for name, g in grads.items():
            p = params[name]
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m *= self.BETA1
            m += (1.0 - self.BETA1) * g
            v *= self.BETA2
            v += (1.0 - self.BETA2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.EPS)
            p.data -= lr * (update + self.WEIGHT_DECAY * p.data)


def make_optimizer(cfg: AdvConfig):
    if cfg.optimizer == "sgd":
        return SgdOptimizer(cfg)
    if cfg.optimizer == "adamw":
        return AdamWOptimizer(cfg)
    raise ConfigError(f"unknown optimizer {cfg.optimizer!r}")


# ---------------------------------------------------------------------------
# the train step

@dataclass
class StepDiagnostics:
    """Replay material: the exact noise outcomes, the delta tensor seen
    by each ascent step, and the final accumulated gradient."""

    outcomes: list[list[NoiseOutcome] | None] = field(default_factory=list)
    delta_history: list[np.ndarray] = field(default_factory=list)
    grads: dict[str, np.ndarray] = field(default_factory=dict)


def _check_finite(value: float, what: str, sample_id: str,
                  iteration: int) -> float:
    if not math.isfinite(value):
        raise NumericalError(f"{what} is {value} on sample {sample_id!r} "
                             f"at iteration {iteration}")
    return value


def train_step(model: Model, batch: list[Sample], dictionary: Dictionary,
               rng: np.random.Generator, iteration: int, optimizer,
               collect: bool = False,
               freeze_delta: bool = False) -> tuple[dict, StepDiagnostics | None]:
    """One parameter update over a batch; returns the step's log record
    and, when requested, replay diagnostics.  ``freeze_delta`` pins the
    perturbation at zero (a diagnostic hook for degeneracy checks)."""
    if not batch:
        raise ConfigError("empty batch")
    cfg: RunConfig = model.cfg
    adv = cfg.adv
    params = model.params
    nbatch = len(batch)

    noise_on = cfg.noise.token_noise_enabled
    outcomes: list[list[NoiseOutcome] | None] = []
    for sample in batch:
        if noise_on and sample.ocr_tokens:
            outcomes.append(draw_noise(sample.ocr_tokens, dictionary,
                                       cfg.noise, rng))
        else:
            outcomes.append(None)

    diag = StepDiagnostics(outcomes=list(outcomes)) if collect else None
    g_raw: dict[str, np.ndarray] = {}
    last_pred = 0.0
    last_kl = 0.0
    delta_norm = 0.0

    def drain_param_grads() -> None:
        for name, p in params.items():
            if p.grad is not None:
                if name in g_raw:
                    g_raw[name] += p.grad
                else:
                    g_raw[name] = p.grad.copy()
                p.grad = None

    if adv.adv_enabled:
        d = cfg.embed.d
        lmax = max(len(s.ocr_tokens) for s in batch)
        if lmax == 0:
            raise ConfigError("adversarial training requires OCR tokens")
        delta = init_delta((nbatch, lmax, d), adv.lambda_adv, rng)
        for b, sample in enumerate(batch):
            delta[b, len(sample.ocr_tokens):, :] = 0.0
        if freeze_delta:
            delta[...] = 0.0
        scale = 1.0 / (adv.K * nbatch)

        for _t in range(adv.K):
            if diag is not None:
                diag.delta_history.append(delta.copy())
            g_ocr = np.zeros_like(delta)
            pred_sum = 0.0
            kl_sum = 0.0
            for b, sample in enumerate(batch):
                locr = len(sample.ocr_tokens)
                delta_t = Tensor(delta[b, :locr, :].copy(), requires_grad=True)
                with T.Tape():
                    fwd = model.forward_teacher(sample, outcomes=outcomes[b],
                                                delta=delta_t)
                    anchor = model.clean_probs(sample, outcomes=outcomes[b])
                    l_pred = loss_pred(fwd.logits, fwd.targets)
                    l_kl = loss_kl(T.sigmoid(fwd.logits), anchor)
                    total = T.add(l_pred, T.scale(l_kl, adv.kl_weight))
                T.backward(total)
                pred_sum += _check_finite(l_pred.item(), "prediction loss",
                                          sample.id, iteration)
                kl_sum += _check_finite(l_kl.item(), "divergence loss",
                                        sample.id, iteration)
                if delta_t.grad is not None:
                    g_ocr[b, :locr, :] = delta_t.grad
            drain_param_grads()
            if not freeze_delta:
                delta = pgd_ascend(delta, g_ocr, adv.alpha, adv.lambda_adv)
            last_pred = pred_sum / nbatch
            last_kl = kl_sum / nbatch
        delta_norm = float(np.sqrt((delta * delta).sum()))
    else:
        scale = 1.0 / nbatch
        pred_sum = 0.0
        for b, sample in enumerate(batch):
            with T.Tape():
                fwd = model.forward_teacher(sample, outcomes=outcomes[b])
                l_pred = loss_pred(fwd.logits, fwd.targets)
            T.backward(l_pred)
            pred_sum += _check_finite(l_pred.item(), "prediction loss",
                                      sample.id, iteration)
        drain_param_grads()
        last_pred = pred_sum / nbatch
        last_kl = 0.0

    grads = {name: g * scale for name, g in g_raw.items()}
    if diag is not None:
        diag.grads = {name: g.copy() for name, g in grads.items()}
    grad_norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    optimizer.step(params, grads, iteration)

    record = {
        "iter": iteration,
        "loss_pred": last_pred,
        "loss_kl": last_kl,
        "delta_norm": delta_norm,
        "grad_norm": grad_norm,
        "lr": optimizer.lr(iteration),
    }
    return record, diag


def train_loop(model: Model, samples: list[Sample], dictionary: Dictionary,
               iterations: int, rng: np.random.Generator, optimizer=None,
               on_step=None) -> list[dict]:
    """Run ``iterations`` train steps over shuffled batches of the corpus.
    ``on_step(record)`` is called after each step; raising StopIteration
    from it ends training early."""
    if not samples:
        raise ConfigError("training corpus is empty")
    if optimizer is None:
        optimizer = make_optimizer(model.cfg.adv)
    bs = model.cfg.train.batch_size
    order: list[int] = []
    history = []
    for it in range(iterations):
        batch = []
        for _ in range(min(bs, len(samples))):
            if not order:
                order = list(rng.permutation(len(samples)))
            batch.append(samples[order.pop()])
        record, _ = train_step(model, batch, dictionary, rng, it, optimizer)
        history.append(record)
        if on_step is not None:
            try:
                on_step(record)
            except StopIteration:
                break
    return history
