"""Adam optimization, the training loop, and corpus evaluation.

Training runs shuffled mini-batches with per-example backward passes and
batch-averaged gradients. After every epoch the model greedily answers the
validation set; the best mean token-F1 parameters are kept and training
stops once that score fails to improve for `patience` epochs in a row.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import TrainingConfig
from .errors import NumericalError, ShapeError, ValidationError
from .metrics import bleu, cider, rouge_l_corpus
from .tensor import Tape

__all__ = ["Adam", "token_f1", "TrainResult", "train", "evaluate"]


class Adam(object):
    """Standard Adam with bias correction over a named parameter dict.

    A zero gradient leaves its parameter bitwise untouched as long as the
    moments are still zero, which keeps unused modules exactly frozen.
    """

    def __init__(self, params: dict, learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: dict) -> None:
        if set(grads) != set(self.params):
            raise ValidationError("gradient names do not match parameter names")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, param in self.params.items():
            g = grads[name]
            if g.shape != param.data.shape:
                raise ShapeError(
                    f"gradient for {name!r} is {g.shape}, parameter is {param.data.shape}"
                )
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            m_hat = m / (1.0 - b1 ** self.t)
            v_hat = v / (1.0 - b2 ** self.t)
            param.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


def token_f1(pred, gold) -> float:
    """Multiset token overlap F1; 0 when either side is empty."""
    if not pred or not gold:
        return 0.0
    overlap = sum((Counter(pred) & Counter(gold)).values())
    if overlap == 0:
        return 0.0
    p = overlap / len(pred)
    r = overlap / len(gold)
    return 2.0 * p * r / (p + r)


@dataclass
class TrainResult:
    """Best parameters plus the per-epoch log of a training run."""

    params: dict
    best_f1: float
    best_epoch: int
    epochs_run: int
    log: list = field(default_factory=list)
    epochs_to_target: Optional[int] = None
    optimizer: Optional[Adam] = None


def _mean_f1(model, examples, max_len: int) -> float:
    total = 0.0
    for example in examples:
        total += token_f1(model.generate(example, max_len), example.answer)
    return total / len(examples)


def train(model, train_set, val_set, cfg: TrainingConfig,
          stop_at_train_f1: Optional[float] = None) -> TrainResult:
    """Optimize `model` in place; on return it holds the best parameters.

    With `stop_at_train_f1` set, training additionally measures greedy
    token-F1 on the training set each epoch and stops the moment it reaches
    the target, keeping the current parameters (used by overfitting probes).
    """
    if not train_set or not val_set:
        raise ValidationError("training and validation sets must be non-empty")
    shuffle_seed, sample_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    sample_rng = np.random.default_rng(sample_seed)

    params = model.parameters()
    adam = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    best = {name: p.data.copy() for name, p in params.items()}
    best_f1 = -1.0
    best_epoch = 0
    stale = 0
    log = []
    epochs_run = 0
    epochs_to_target = None

    for epoch in range(1, cfg.max_epochs + 1):
        epochs_run = epoch
        order = shuffle_rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            totals = {name: np.zeros_like(p.data) for name, p in params.items()}
            for idx in batch:
                with Tape() as tape:
                    for p in params.values():
                        tape.watch(p)
                    loss = model.loss(train_set[idx], mode=cfg.loss_mode,
                                      p_model=cfg.ss_probability, rng=sample_rng)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise NumericalError(
                            f"loss diverged to {value} at epoch {epoch} "
                            f"(example {train_set[idx].video_id!r})"
                        )
                    grads = tape.backward(loss)
                    for name, p in params.items():
                        totals[name] += grads.wrt(p)
                epoch_loss += value
            if model.freeze_embeddings:
                totals["embedding.matrix"][...] = 0.0
            scale = 1.0 / len(batch)
            adam.step({name: g * scale for name, g in totals.items()})
        epoch_loss /= len(train_set)

        val_f1 = _mean_f1(model, val_set, cfg.max_generate_len)
        entry = {"epoch": epoch, "loss": epoch_loss, "val_f1": val_f1}

        if val_f1 > best_f1:
            best_f1 = val_f1
            best_epoch = epoch
            best = {name: p.data.copy() for name, p in params.items()}
            stale = 0
        else:
            stale += 1

        if stop_at_train_f1 is not None:
            train_f1 = _mean_f1(model, train_set, cfg.max_generate_len)
            entry["train_f1"] = train_f1
            log.append(entry)
            if train_f1 >= stop_at_train_f1:
                epochs_to_target = epoch
                best = {name: p.data.copy() for name, p in params.items()}
                best_f1 = val_f1
                best_epoch = epoch
                break
        else:
            log.append(entry)

        if stale >= cfg.patience:
            break

    for name, p in params.items():
        p.data[...] = best[name]
    return TrainResult(params=best, best_f1=best_f1, best_epoch=best_epoch,
                       epochs_run=epochs_run, log=log,
                       epochs_to_target=epochs_to_target, optimizer=adam)


def evaluate(model, examples, max_len: int = 20):
    """Greedy generation plus the full metric table.

    Returns (scores dict in canonical order, generated token lists).
    """
    if not examples:
        raise ValidationError("evaluation set must be non-empty")
    candidates = [model.generate(ex, max_len) for ex in examples]
    references = [[ex.answer] for ex in examples]
    scores = {f"bleu{k}": bleu(candidates, references, k) for k in (1, 2, 3, 4)}
    scores["rouge_l"] = rouge_l_corpus(candidates, references)
    scores["cider"] = cider(candidates, references)
    scores["token_f1"] = sum(
        token_f1(c, ex.answer) for c, ex in zip(candidates, examples)
    ) / len(examples)
    return scores, candidates
