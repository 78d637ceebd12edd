"""Training and evaluation loops for discretized models and baselines."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import primitives as P
from .backbone import Backbone
from .data import Dataset, cutout_augment
from .errors import EmptyDataset, NonFiniteLoss
from .genotype import Genotype
from .optim import sgd_step
from .rng import stream
from .tensor import Tape, Tensor, backward


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    label_smoothing: float = 0.1
    cutout_enabled: bool = False
    cutout_length: int = 8
    seed: int = 0


@dataclass
class TrainReport:
    metrics: List[dict] = field(default_factory=list)  # epoch, train_loss, eval_acc
    best_accuracy: float = 0.0
    best_epoch: int = -1


def _batches(n: int, batch_size: int, rng: Optional[np.random.Generator]):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Cosine annealing from base_lr at epoch 0 to 0 at total_epochs."""
    return 0.5 * base_lr * (1.0 + np.cos(np.pi * epoch / max(total_epochs, 1)))


def evaluate(
    backbone: Backbone,
    ds: Dataset,
    genotype: Optional[Genotype] = None,
    batch_size: int = 128,
) -> Tuple[float, float]:
    """Top-1 accuracy and mean cross-entropy in eval mode (noise off)."""
    if len(ds) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    correct = 0
    loss_sum = 0.0
    for idx in _batches(len(ds), batch_size, None):
        tape = Tape()
        x = Tensor(ds.images[idx])
        logits = backbone.forward(tape, x, genotype=genotype)
        loss = P.cross_entropy_logits(tape, logits, ds.labels[idx])
        loss_sum += loss.item() * len(idx)
        pred = logits.data.reshape(len(idx), -1).argmax(axis=1)
        correct += int((pred == ds.labels[idx]).sum())
    return correct / len(ds), loss_sum / len(ds)


def train_model(
    backbone: Backbone,
    train_ds: Dataset,
    eval_ds: Dataset,
    cfg: TrainConfig,
    genotype: Optional[Genotype] = None,
) -> TrainReport:
    """SGD with momentum and cosine-annealed lr; keeps the best checkpoint."""
    if len(train_ds) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    report = TrainReport()
    best_state = None
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        shuffle_rng = stream(cfg.seed, "train_shuffle", str(epoch))
        cut_rng = stream(cfg.seed, "cutout", str(epoch))
        losses = []
        for idx in _batches(len(train_ds), cfg.batch_size, shuffle_rng):
            xb = train_ds.images[idx]
            if cfg.cutout_enabled:
                xb = cutout_augment(xb, cfg.cutout_length, cut_rng)
            tape = Tape()
            logits = backbone.forward(tape, Tensor(xb), genotype=genotype)
            loss = P.cross_entropy_logits(
                tape, logits, train_ds.labels[idx], label_smoothing=cfg.label_smoothing
            )
            if not np.isfinite(loss.item()):
                raise NonFiniteLoss(f"non-finite training loss at epoch {epoch}")
            backbone.store.zero_grads()
            backward(tape, loss)
            sgd_step(backbone.store, lr, cfg.momentum, cfg.weight_decay)
            losses.append(loss.item())
        acc, _ = evaluate(backbone, eval_ds, genotype=genotype)
        report.metrics.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)), "eval_acc": acc}
        )
        if acc >= report.best_accuracy:
            report.best_accuracy = acc
            report.best_epoch = epoch
            best_state = backbone.store.state_dict()
    if best_state is not None:
        backbone.store.load_state_dict(best_state)
    return report
