"""Joint objective, learning-rate schedules and the early-stopping training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .data import batch as make_batches
from .models import save_checkpoint

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 0.5
    lr_mode: str = "noam"
    lr_init: float = 0.2
    warmup: int = 16000
    lr_fixed: float = 1e-5
    patience: int = 10
    batch_size: int = 40
    max_epochs: int = 100
    seed: int = 0
    clip_norm: float | None = 1.0
    label_smoothing: float = 0.0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_concat: int = 160

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lr_mode not in ("noam", "fixed"):
            raise ValueError(f"unknown lr_mode {self.lr_mode!r}")
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")
        self.adam_betas = tuple(self.adam_betas)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    best_valid_ppl: float = math.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0


@dataclass
class TrainResult:
    model: object  # best checkpoint's model (a copy)
    history: list
    state: TrainState
    adam_state: ad.AdamState = field(repr=False, default=None)


def noam_lr(step, d_model, warmup, init):
    if step < 1:
        raise ValueError("noam schedule is defined for step >= 1")
    return init * d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


def learning_rate(cfg, step, d_model):
    if cfg.lr_mode == "fixed":
        return cfg.lr_fixed
    return noam_lr(step, d_model, cfg.warmup, cfg.lr_init)


def _pad_mask(labels):
    return np.asarray(labels) == 0


def translation_nll(out, batch, label_smoothing=0.0):
    return ad.cross_entropy(out.translation_logits, batch.target, _pad_mask(batch.target), label_smoothing)


def reconstruction_nll(out, batch, model, label_smoothing=0.0):
    _, labels = model.cascade_inputs(batch.context, batch.source)
    return ad.cross_entropy(out.reconstruction_logits, labels, _pad_mask(labels), label_smoothing)


def combine_losses(nll_translation, nll_reconstruction, alpha):
    """alpha * NLL_translation + (1 - alpha) * NLL_reconstruction (the negated joint log-likelihood)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return nll_translation
    if alpha == 0.0:
        return nll_reconstruction
    return nll_translation * alpha + nll_reconstruction * (1.0 - alpha)


def joint_loss(out, batch, alpha, model=None, label_smoothing=0.0):
    """Scalar training loss plus the two component NLL tensors (reconstruction may be None)."""
    nll_t = translation_nll(out, batch, label_smoothing)
    if out.reconstruction_logits is None:
        return nll_t, nll_t, None
    nll_r = reconstruction_nll(out, batch, model, label_smoothing)
    return combine_losses(nll_t, nll_r, alpha), nll_t, nll_r


def evaluate_nll(model, triplets, batch_size=64, max_concat=160):
    """Token-weighted mean NLLs over ``triplets``: (translation, reconstruction or None)."""
    tot_t = tot_r = 0.0
    n_t = n_r = 0
    with ad.no_grad():
        for b in make_batches(triplets, batch_size, max_concat=max_concat):
            out = model.forward(b)
            k = int((b.target != 0).sum())
            tot_t += translation_nll(out, b).item() * k
            n_t += k
            if out.reconstruction_logits is not None:
                _, labels = model.cascade_inputs(b.context, b.source)
                k = int((labels != 0).sum())
                tot_r += reconstruction_nll(out, b, model).item() * k
                n_r += k
    return tot_t / n_t, (tot_r / n_r if n_r else None)


def _clip(grads, max_norm):
    norm = ad.global_grad_norm(grads)
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: (g * scale if g is not None else None) for k, g in grads.items()}
    return grads, norm


def train(model, train_triplets, valid_triplets, cfg, checkpoint_path=None, history_path=None, callback=None):
    """Train until ``cfg.patience`` epochs pass without a strict validation-perplexity improvement.

    Model selection uses translation-only perplexity.  Returns a
    :class:`TrainResult` whose ``model`` is a copy of the best epoch's
    parameters; ``model`` itself is left at the final state.
    """
    alpha = cfg.alpha if model.config.is_cascade else 1.0
    rng = np.random.default_rng(cfg.seed)
    adam = ad.AdamState()
    state = TrainState()
    history = []
    best = model.copy()
    hist_fh = open(history_path, "w", encoding="utf-8") if history_path else None

    def emit(record):
        history.append(record)
        if hist_fh:
            hist_fh.write(json.dumps(record, sort_keys=True) + "\n")
            hist_fh.flush()

    try:
        for epoch in range(cfg.max_epochs):
            state.epoch = epoch
            batches = make_batches(train_triplets, cfg.batch_size, shuffle_seed=int(rng.integers(2**31)), max_concat=cfg.max_concat)
            sums = {"loss": 0.0, "nll_t": 0.0, "nll_r": 0.0}
            for bi, b in enumerate(batches):
                state.step += 1
                lr = learning_rate(cfg, state.step, model.cfg.d_model)
                model.zero_grad()
                out = model.forward(b, rng=rng)
                loss, nll_t, nll_r = joint_loss(out, b, alpha, model, cfg.label_smoothing)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError(f"non-finite loss {value} at step {state.step} (epoch {epoch}, batch {bi}, lr {lr:.3g})")
                ad.backward(loss)
                grads, _ = _clip(model.grads(), cfg.clip_norm)
                ad.adam_step(model.params, grads, adam, lr, *cfg.adam_betas, cfg.adam_eps)
                sums["loss"] += value
                sums["nll_t"] += nll_t.item()
                sums["nll_r"] += nll_r.item() if nll_r is not None else 0.0
            nll_t, nll_r = evaluate_nll(model, valid_triplets, max_concat=cfg.max_concat)
            ppl = math.exp(min(nll_t, 700.0))
            improved = ppl < state.best_valid_ppl
            if improved:
                state.best_valid_ppl = ppl
                state.best_epoch = epoch
                state.epochs_since_improvement = 0
                best = model.copy()
                if checkpoint_path:
                    save_checkpoint(checkpoint_path, best, adam, asdict(state))
            else:
                state.epochs_since_improvement += 1
            nb = max(len(batches), 1)
            record = {
                "epoch": epoch,
                "step": state.step,
                "lr": learning_rate(cfg, max(state.step, 1), model.cfg.d_model),
                "train_loss": sums["loss"] / nb,
                "train_nll_translation": sums["nll_t"] / nb,
                "train_nll_reconstruction": (sums["nll_r"] / nb) if model.config.is_cascade else None,
                "valid_ppl": ppl,
                "valid_ppl_reconstruction": math.exp(min(nll_r, 700.0)) if nll_r is not None else None,
                "improved": improved,
            }
            emit(record)
            log.info("epoch %d step %d loss %.4f valid ppl %.3f%s", epoch, state.step, record["train_loss"], ppl, " *" if improved else "")
            if callback is not None and callback(record, model) is False:
                break
            if state.epochs_since_improvement >= cfg.patience:
                break
    finally:
        if hist_fh:
            hist_fh.close()
    return TrainResult(best, history, state, adam)
