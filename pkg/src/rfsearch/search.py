"""First-order alternating bilevel search over (weights, alpha).

Each step updates alpha on a validation batch with the weights frozen
(Adam), then the weights on a training batch with alpha frozen (momentum
SGD).  Per-epoch telemetry records losses, the current skip-connection
count (argmax-identity edges), and wall time.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from . import primitives as P
from .attention import AttentionConfig, MixedEdgeParams, count_skip_connections, discretize
from .backbone import Backbone, BackboneSpec
from .data import Dataset, cutout_augment, split_dataset
from .errors import NonFinite, NonFiniteLoss
from .genotype import Genotype
from .ops import NoiseConfig
from .optim import ParamStore, adam_step, sgd_step
from .rng import stream
from .tensor import Tape, Tensor, backward
from .train import TrainConfig, TrainReport, evaluate, train_model


@dataclass
class SearchConfig:
    """Search hyperparameters; dataclass defaults mirror the reference protocol."""

    epochs: int = 50
    batch_size: int = 128
    w_lr: float = 1e-4
    w_momentum: float = 0.9
    w_weight_decay: float = 5e-4
    alpha_lr: float = 1e-4
    alpha_betas: Tuple[float, float] = (0.5, 0.999)
    alpha_weight_decay: float = 1e-3
    noise: NoiseConfig = field(default_factory=lambda: NoiseConfig(0.0, 2.0, enabled=True))
    seed: int = 0
    val_fraction: float = 0.5
    cutout_enabled: bool = False
    cutout_length: int = 8
    grad_clip: float = 0.0  # 0 disables clipping


@dataclass
class SearchState:
    backbone: Backbone
    params: MixedEdgeParams
    alpha_store: ParamStore
    epoch: int = 0
    skip_history: List[int] = field(default_factory=list)
    train_loss_history: List[float] = field(default_factory=list)
    val_loss_history: List[float] = field(default_factory=list)
    wall_history: List[float] = field(default_factory=list)


@dataclass
class SearchReport:
    genotype: Genotype
    skip_history: List[int]
    train_loss_history: List[float]
    val_loss_history: List[float]
    wall_history: List[float]
    aborted: bool = False
    abort_reason: str = ""


def _clip_grads(store: ParamStore, max_norm: float) -> None:
    total = 0.0
    for _, t in store.items():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for _, t in store.items():
            if t.grad is not None:
                t.grad *= factor


def search_step(
    state: SearchState,
    train_batch: Tuple[np.ndarray, np.ndarray],
    val_batch: Tuple[np.ndarray, np.ndarray],
    cfg: SearchConfig,
    noise_rng: Optional[np.random.Generator] = None,
) -> Tuple[float, float]:
    """One alternating step: alpha on the val batch, then w on the train batch.

    Returns (train_loss, val_loss).  Raises NonFiniteLoss on divergence.
    """
    bb = state.backbone

    # (1) architecture half-step; weights frozen
    xv, yv = val_batch
    tape = Tape()
    logits = bb.forward(tape, Tensor(xv), params=state.params, noise=cfg.noise, rng=noise_rng)
    val_loss = P.cross_entropy_logits(tape, logits, yv)
    if not np.isfinite(val_loss.item()):
        raise NonFiniteLoss(f"non-finite validation loss at epoch {state.epoch}")
    state.alpha_store.zero_grads()
    bb.store.zero_grads()
    backward(tape, val_loss)
    if cfg.grad_clip > 0:
        _clip_grads(state.alpha_store, cfg.grad_clip)
    adam_step(state.alpha_store, cfg.alpha_lr, cfg.alpha_betas, cfg.alpha_weight_decay)

    # (2) weight half-step; alpha frozen
    xt, yt = train_batch
    tape = Tape()
    logits = bb.forward(tape, Tensor(xt), params=state.params, noise=cfg.noise, rng=noise_rng)
    train_loss = P.cross_entropy_logits(tape, logits, yt)
    if not np.isfinite(train_loss.item()):
        raise NonFiniteLoss(f"non-finite training loss at epoch {state.epoch}")
    bb.store.zero_grads()
    state.alpha_store.zero_grads()
    backward(tape, train_loss)
    if cfg.grad_clip > 0:
        _clip_grads(bb.store, cfg.grad_clip)
    sgd_step(bb.store, cfg.w_lr, cfg.w_momentum, cfg.w_weight_decay)

    return train_loss.item(), val_loss.item()


def run_search(
    backbone_spec: BackboneSpec,
    attn_cfg: AttentionConfig,
    dataset: Dataset,
    cfg: SearchConfig,
) -> Tuple[Genotype, SearchReport]:
    """Run the full search loop and discretize the final alpha."""
    train_ds, val_ds = split_dataset(dataset, cfg.val_fraction, cfg.seed)
    backbone = Backbone(backbone_spec, attn_cfg, seed=cfg.seed, with_attention=True)
    params = MixedEdgeParams(attn_cfg)
    alpha_store = ParamStore()
    params.register(alpha_store)
    state = SearchState(backbone=backbone, params=params, alpha_store=alpha_store)

    aborted = False
    reason = ""
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            state.epoch = epoch
            tr_rng = stream(cfg.seed, "search_train", str(epoch))
            va_rng = stream(cfg.seed, "search_val", str(epoch))
            cut_rng = stream(cfg.seed, "search_cutout", str(epoch))
            noise_rng = stream(cfg.seed, "search_noise", str(epoch))
            tr_order = tr_rng.permutation(len(train_ds))
            va_order = va_rng.permutation(len(val_ds))
            b = cfg.batch_size
            n_steps = max(len(train_ds) // b, 1)
            tr_losses, va_losses = [], []
            for s in range(n_steps):
                ti = tr_order[s * b : (s + 1) * b]
                vi = va_order[(s * b) % len(val_ds) : (s * b) % len(val_ds) + b]
                if len(vi) < min(b, len(val_ds)):
                    vi = va_order[:b]
                xt = train_ds.images[ti]
                if cfg.cutout_enabled:
                    xt = cutout_augment(xt, cfg.cutout_length, cut_rng)
                tl, vl = search_step(
                    state,
                    (xt, train_ds.labels[ti]),
                    (val_ds.images[vi], val_ds.labels[vi]),
                    cfg,
                    noise_rng=noise_rng,
                )
                tr_losses.append(tl)
                va_losses.append(vl)
            state.train_loss_history.append(float(np.mean(tr_losses)))
            state.val_loss_history.append(float(np.mean(va_losses)))
            state.skip_history.append(count_skip_connections(state.params))
            state.wall_history.append(time.perf_counter() - t0)
    except (NonFiniteLoss, NonFinite) as e:
        aborted = True
        reason = str(e)

    genotype = discretize(state.params)
    report = SearchReport(
        genotype=genotype,
        skip_history=list(state.skip_history),
        train_loss_history=list(state.train_loss_history),
        val_loss_history=list(state.val_loss_history),
        wall_history=list(state.wall_history),
        aborted=aborted,
        abort_reason=reason,
    )
    return genotype, report


@dataclass
class SweepCell:
    mu: float
    sigma: float
    seed: int
    final_accuracy: float  # NaN when the cell failed
    final_skip_count: int


def _sweep_cell(
    backbone_spec: BackboneSpec,
    attn_cfg: AttentionConfig,
    dataset: Dataset,
    cfg: SearchConfig,
    retrain_cfg: TrainConfig,
    mu: float,
    sigma: float,
    seed: int,
) -> SweepCell:
    cell_cfg = replace(
        cfg, seed=seed, noise=NoiseConfig(mu, sigma, enabled=sigma > 0 or mu != 0)
    )
    genotype, report = run_search(backbone_spec, attn_cfg, dataset, cell_cfg)
    skips = count_skip_connections(genotype)
    model = Backbone(backbone_spec, attn_cfg, seed=seed, with_attention=True)
    train_ds, eval_ds = split_dataset(dataset, 0.25, seed + 1)
    rcfg = replace(retrain_cfg, seed=seed)
    train_model(model, train_ds, eval_ds, rcfg, genotype=genotype)
    acc, _ = evaluate(model, eval_ds, genotype=genotype)
    return SweepCell(mu, sigma, seed, acc, skips)


def noise_sweep(
    backbone_spec: BackboneSpec,
    attn_cfg: AttentionConfig,
    dataset: Dataset,
    cfg: SearchConfig,
    retrain_cfg: TrainConfig,
    mus: List[float],
    sigmas: List[float],
    seeds: List[int],
    n_workers: int = 1,
) -> List[SweepCell]:
    """Grid of (mu, sigma, seed) search+retrain runs; failed cells get NaN accuracy."""
    jobs = [(mu, sigma, seed) for mu in mus for sigma in sigmas for seed in seeds]

    def run_job(job):
        mu, sigma, seed = job
        try:
            return _sweep_cell(
                backbone_spec, attn_cfg, dataset, cfg, retrain_cfg, mu, sigma, seed
            )
        except (NonFiniteLoss, NonFinite):
            return SweepCell(mu, sigma, seed, float("nan"), -1)

    if n_workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            cells = list(ex.map(_sweep_cell_star, [
                (backbone_spec, attn_cfg, dataset, cfg, retrain_cfg, *job) for job in jobs
            ]))
    else:
        cells = [run_job(job) for job in jobs]
    return cells


def _sweep_cell_star(args):
    try:
        return _sweep_cell(*args)
    except (NonFiniteLoss, NonFinite):
        _, _, _, _, _, mu, sigma, seed = args
        return SweepCell(mu, sigma, seed, float("nan"), -1)
