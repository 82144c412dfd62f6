"""Mini-batch training with AdamW, linear warmup/decay, clipping and early stopping."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Parameter, Tape
from .metrics import PredictionSet, UndefinedF1Error, best_threshold
from .model import DocREModel, PreparedDocument, named_rng

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 4
    lr: float = 1e-3  # the reference 3e-5 suits pretrained encoders, not a toy one trained from scratch
    warmup_ratio: float = 0.06
    max_grad_norm: float = 1.0
    max_tolerance: int = 5
    epochs: int = 30
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 1 or self.max_tolerance < 1:
            raise ValueError("batch_size, epochs and max_tolerance must be positive")
        if not self.lr > 0 or not self.max_grad_norm > 0 or self.weight_decay < 0:
            raise ValueError("lr and max_grad_norm must be positive, weight_decay >= 0")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError(f"warmup_ratio must lie in [0, 1), got {self.warmup_ratio}")


class AdamW:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, params: Sequence[Parameter], betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient in parameter {p.name!r}")
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    warmup = math.ceil(cfg.warmup_ratio * total_steps)
    if step < warmup:
        return cfg.lr * step / warmup
    if total_steps <= warmup:
        return cfg.lr
    return cfg.lr * max(0.0, (total_steps - step) / (total_steps - warmup))


def global_grad_norm(params: Sequence[Parameter]) -> float:
    return math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))


def clip_gradients(params: Sequence[Parameter], max_norm: float) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``;
    returns the scale applied."""
    norm = global_grad_norm(params)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for p in params:
        p.grad *= scale
    return scale


@dataclass
class EarlyStopState:
    max_tolerance: int
    best_f1: float = -math.inf
    best_epoch: int = -1
    previous_f1: float | None = None
    counter: int = 0
    best_state: dict | None = None

    def update(self, epoch: int, f1: float, state_fn: Callable[[], dict]) -> bool:
        """Record one evaluation; returns True when training should stop.

        The counter grows when F1 does not improve on the previous evaluation
        and resets on any improvement over it.
        """
        if self.previous_f1 is not None and f1 <= self.previous_f1:
            self.counter = min(self.counter + 1, self.max_tolerance)
        else:
            self.counter = 0
        self.previous_f1 = f1
        if f1 > self.best_f1:
            self.best_f1, self.best_epoch = f1, epoch
            self.best_state = state_fn()
        return self.counter >= self.max_tolerance


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_f1: float = 0.0
    stopped_early: bool = False


def dev_f1(model: DocREModel, dev: list[PreparedDocument]) -> tuple[float, float]:
    preds = PredictionSet.from_scores(model.score(dev))
    try:
        theta, f1 = best_threshold(preds)
    except UndefinedF1Error:
        return 0.5, 0.0
    return theta, f1


def train(model: DocREModel, train_docs: list[PreparedDocument], dev_docs: list[PreparedDocument],
          cfg: TrainConfig, on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train in place; the model ends at the parameters of the best dev epoch."""
    cfg.validate()
    if not train_docs or not dev_docs:
        raise TrainingError("train and dev splits must both be non-empty")
    titles = {d.title for d in train_docs}
    if any(d.title in titles for d in dev_docs):
        log.warning("train and dev splits share document titles")
    params = model.parameters()
    opt = AdamW(params, cfg.betas, cfg.eps, cfg.weight_decay)
    rng_data = named_rng(cfg.seed, "data")
    rng_drop = named_rng(cfg.seed, "dropout")
    rng_drop_rel = named_rng(cfg.seed, "dropout-relations")
    steps_per_epoch = math.ceil(len(train_docs) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    stopper = EarlyStopState(cfg.max_tolerance)
    result = TrainResult()
    step = 0
    for p in params:
        p.zero_grad()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng_data.permutation(len(train_docs))
        losses = []
        lr = 0.0
        for b in range(steps_per_epoch):
            batch = [train_docs[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            if not any(len(d.pairs) for d in batch):
                continue
            with Tape() as tape:
                loss = model.batch_loss(batch, rng_drop, rng_drop_rel)
            if not np.isfinite(loss.item()):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            tape.backward(loss)
            clip_gradients(params, cfg.max_grad_norm)
            lr = lr_at(step, total, cfg)
            opt.step(lr)
            step += 1
            losses.append(loss.item())
        theta, f1 = dev_f1(model, dev_docs)
        record = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else 0.0,
                  "dev_f1": f1, "threshold": theta, "lr": lr}
        result.history.append(record)
        log.info("epoch %d loss %.5f dev F1 %.4f (%.1fs)", epoch, record["loss"], f1,
                 time.perf_counter() - t0)
        if on_epoch:
            on_epoch(record)
        if stopper.update(epoch, f1, model.state):
            result.stopped_early = True
            break
    if stopper.best_state is not None:
        model.load_state(stopper.best_state)
    result.best_epoch = stopper.best_epoch
    result.best_dev_f1 = stopper.best_f1
    return result


def config_dict(cfg) -> dict:
    return asdict(cfg)
