"""Optimization and cross-validation machinery.

AdamW with decoupled weight decay, a linear-warmup cosine learning-rate
schedule evaluated per epoch, global-norm gradient clipping, deterministic
stratified k-fold and leave-one-group-out splitters, and the per-clip
training loop (batches accumulate scaled per-clip gradients before each
optimizer step).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.05
    warmup_epochs: int = 2
    total_epochs: int = 30
    batch_size: int = 8
    grad_clip_norm: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ValueError(f"warmup {self.warmup_epochs} must not exceed total epochs {self.total_epochs}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0,1)")


def cosine_lr(epoch: float, base: float, warmup: int, total: int) -> float:
    """Linear warmup to ``base`` then cosine decay to 0 at ``epoch == total``."""
    if total <= 0:
        return 0.0
    if epoch < warmup:
        return base * (epoch + 1) / warmup
    if total == warmup:
        return 0.0
    progress = (epoch - warmup) / (total - warmup)
    return 0.5 * base * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Decoupled weight decay; bias-corrected first/second moments."""

    def __init__(self, params: Sequence[Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.beta1, self.beta2 = beta1, beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= lr * update


def clip_gradients(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm does not exceed max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class SplitPlan:
    kind: str
    folds: list  # clip-id lists; disjoint, union covers the dataset

    def train_test(self, fold_index: int) -> tuple:
        test = list(self.folds[fold_index])
        train = [cid for i, f in enumerate(self.folds) if i != fold_index for cid in f]
        return train, test

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "folds": self.folds}, sort_keys=True)

    def validate(self, all_ids) -> None:
        seen: list = []
        for f in self.folds:
            seen.extend(f)
        if len(seen) != len(set(seen)):
            raise ValueError("folds overlap")
        if set(seen) != set(all_ids):
            raise ValueError("folds do not cover the dataset")


def kfold(manifest, k: int, seed: int) -> SplitPlan:
    """Deterministic class-stratified k-fold split."""
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    by_class: dict = {}
    for clip in manifest.clips:
        by_class.setdefault(clip.label, []).append(clip.clip_id)
    folds: list = [[] for _ in range(k)]
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        rng.shuffle(ids)
        for i, cid in enumerate(ids):
            folds[i % k].append(cid)
    return SplitPlan(kind=f"{k}-fold", folds=[sorted(f) for f in folds])


def leave_one_group_out(manifest) -> SplitPlan:
    groups: dict = {}
    for clip in manifest.clips:
        groups.setdefault(clip.group, []).append(clip.clip_id)
    folds = [sorted(groups[g]) for g in sorted(groups)]
    return SplitPlan(kind="leave-one-group-out", folds=folds)


def train_model(model, examples: Sequence, config: TrainConfig,
                log: Callable[[str], None] | None = None) -> list:
    """Cross-entropy training over (clip_loader, label) pairs; returns per-epoch mean loss.

    ``clip_loader`` is a zero-argument callable producing the (3,T,H,W) array;
    views and frame sampling happen inside it so the loop stays model-agnostic.
    """
    config.validate()
    params = model.parameters()
    opt = AdamW(params, beta1=config.beta1, beta2=config.beta2,
                epsilon=config.epsilon, weight_decay=config.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, len(examples)]))
    n = len(examples)
    model.train()
    history = []
    for epoch in range(config.total_epochs):
        lr = cosine_lr(epoch, config.learning_rate, config.warmup_epochs, config.total_epochs)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            opt.zero_grad()
            for i in batch:
                loader, label = examples[int(i)]
                logits = model.forward(Tensor(loader()))
                ce = ops.cross_entropy(ops.reshape(logits, (1, model.num_classes)), [label])
                epoch_loss += float(ce.data)
                (ce * (1.0 / len(batch))).backward()
            clip_gradients(params, config.grad_clip_norm)
            opt.step(lr)
        history.append(epoch_loss / n)
        if log is not None:
            log(f"epoch {epoch + 1}/{config.total_epochs} lr {lr:.2e} loss {history[-1]:.4f}")
    model.eval()
    return history


def predict_class(model, clip: np.ndarray) -> int:
    logits = model.forward(Tensor(clip))
    return int(np.argmax(logits.data))
