"""Flat key=value run configuration.

One `key = value` pair per line, `#` comments, UTF-8.  Unknown keys are
rejected so typos fail loudly instead of silently reverting to defaults.
The raw file text is kept on the RunConfig for verbatim provenance copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from .attention import AttentionConfig
from .backbone import BackboneSpec
from .data import DatasetSpec
from .errors import ConfigError
from .ops import NoiseConfig, OPS_BY_NAME
from .search import SearchConfig
from .train import TrainConfig


def parse_kv_text(text: str) -> Dict[str, str]:
    pairs: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        pairs[key] = value
    return pairs


def _as_bool(key: str, v: str) -> bool:
    if v.lower() in ("true", "1", "yes", "on"):
        return True
    if v.lower() in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {v!r}")


def _as_int(key: str, v: str) -> int:
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {v!r}") from None


def _as_float(key: str, v: str) -> float:
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {v!r}") from None


def _as_hw(key: str, v: str) -> Tuple[int, int]:
    parts = v.lower().split("x")
    if len(parts) != 2:
        raise ConfigError(f"{key}: expected HxW (e.g. 16x16), got {v!r}")
    return _as_int(key, parts[0]), _as_int(key, parts[1])


def _as_stages(key: str, v: str) -> Tuple[Tuple[int, int], ...]:
    stages = []
    for item in v.split(","):
        parts = item.strip().lower().split("x")
        if len(parts) != 2:
            raise ConfigError(f"{key}: each stage must be CHANNELSxBLOCKS, got {item!r}")
        stages.append((_as_int(key, parts[0]), _as_int(key, parts[1])))
    if not stages:
        raise ConfigError(f"{key}: at least one stage is required")
    return tuple(stages)


def _as_float_list(key: str, v: str) -> List[float]:
    return [_as_float(key, p.strip()) for p in v.split(",") if p.strip()]


def _as_int_list(key: str, v: str) -> List[int]:
    return [_as_int(key, p.strip()) for p in v.split(",") if p.strip()]


def _as_candidates(key: str, v: str):
    ops = []
    for name in (p.strip() for p in v.split(",")):
        if name not in OPS_BY_NAME:
            raise ConfigError(f"{key}: unknown candidate op '{name}'")
        ops.append(OPS_BY_NAME[name])
    if not ops:
        raise ConfigError(f"{key}: candidate set cannot be empty")
    return tuple(ops)


_DEFAULTS: Dict[str, str] = {
    "seed": "0",
    "dataset.source": "synthetic_shapes",
    "dataset.path": "",
    "dataset.image_hw": "16x16",
    "dataset.n_classes": "8",
    "dataset.n_samples": "256",
    "dataset.noise_std": "0.75",
    "dataset.test_samples": "256",
    "backbone.stages": "4x1,8x1,8x1",
    "attn.n_nodes": "4",
    "attn.r_spatial": "1",
    "attn.r_channel": "16",
    "attn.candidates": "max3,max5,max7,avg3,avg5,avg7,strip,noisy_id,zero",
    "search.epochs": "30",
    "search.batch_size": "16",
    "search.w_lr": "0.025",
    "search.w_momentum": "0.9",
    "search.w_weight_decay": "0.0005",
    "search.alpha_lr": "0.01",
    "search.alpha_beta1": "0.5",
    "search.alpha_beta2": "0.999",
    "search.alpha_weight_decay": "0.0",
    "search.noise_mu": "0.0",
    "search.noise_sigma": "2.0",
    "search.noise_enabled": "true",
    "search.val_fraction": "0.5",
    "search.cutout_enabled": "false",
    "search.cutout_length": "8",
    "search.grad_clip": "5.0",
    "train.epochs": "60",
    "train.batch_size": "32",
    "train.lr": "0.03",
    "train.momentum": "0.9",
    "train.weight_decay": "0.0005",
    "train.label_smoothing": "0.1",
    "train.cutout_enabled": "false",
    "train.cutout_length": "8",
    "sweep.mus": "0.0",
    "sweep.sigmas": "0.0,2.0",
    "sweep.seeds": "0,1,2,3",
    "sweep.workers": "1",
    "analyze.n_average": "16",
    "analyze.position": "center",
}


@dataclass
class RunConfig:
    raw_text: str
    seed: int
    dataset: DatasetSpec
    test_dataset: DatasetSpec
    backbone: BackboneSpec
    attention: AttentionConfig
    search: SearchConfig
    train: TrainConfig
    sweep_mus: List[float] = field(default_factory=list)
    sweep_sigmas: List[float] = field(default_factory=list)
    sweep_seeds: List[int] = field(default_factory=list)
    sweep_workers: int = 1
    analyze_n_average: int = 16
    analyze_position: str = "center"


def build_run_config(text: str) -> RunConfig:
    pairs = parse_kv_text(text)
    unknown = sorted(set(pairs) - set(_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = dict(_DEFAULTS)
    merged.update(pairs)
    g = merged.__getitem__

    seed = _as_int("seed", g("seed"))
    source = g("dataset.source")
    if source not in ("synthetic_shapes", "cifar10_binary"):
        raise ConfigError(f"dataset.source: unknown source '{source}'")
    n_classes = _as_int("dataset.n_classes", g("dataset.n_classes"))
    dataset = DatasetSpec(
        source=source,
        path=g("dataset.path"),
        image_hw=_as_hw("dataset.image_hw", g("dataset.image_hw")),
        n_classes=n_classes,
        n_samples=_as_int("dataset.n_samples", g("dataset.n_samples")),
        seed=seed,
        noise_std=_as_float("dataset.noise_std", g("dataset.noise_std")),
    )
    # held-out test set from a disjoint generator seed
    test_dataset = DatasetSpec(
        source=source,
        path=g("dataset.path"),
        image_hw=dataset.image_hw,
        n_classes=n_classes,
        n_samples=_as_int("dataset.test_samples", g("dataset.test_samples")),
        seed=seed + 999_983,
        noise_std=dataset.noise_std,
    )
    in_channels = 3 if source == "cifar10_binary" else 1
    if source == "cifar10_binary":
        n_classes = 10
        dataset.n_classes = 10
        test_dataset.n_classes = 10
    backbone = BackboneSpec(
        stages=_as_stages("backbone.stages", g("backbone.stages")),
        in_channels=in_channels,
        n_classes=n_classes,
    )
    attention = AttentionConfig(
        n_nodes=_as_int("attn.n_nodes", g("attn.n_nodes")),
        r_spatial=_as_int("attn.r_spatial", g("attn.r_spatial")),
        r_channel=_as_int("attn.r_channel", g("attn.r_channel")),
        candidate_set=_as_candidates("attn.candidates", g("attn.candidates")),
    )
    if attention.n_nodes < 2:
        raise ConfigError("attn.n_nodes: must be >= 2")
    sigma = _as_float("search.noise_sigma", g("search.noise_sigma"))
    if sigma < 0:
        raise ConfigError("search.noise_sigma: must be >= 0")
    search = SearchConfig(
        epochs=_as_int("search.epochs", g("search.epochs")),
        batch_size=_as_int("search.batch_size", g("search.batch_size")),
        w_lr=_as_float("search.w_lr", g("search.w_lr")),
        w_momentum=_as_float("search.w_momentum", g("search.w_momentum")),
        w_weight_decay=_as_float("search.w_weight_decay", g("search.w_weight_decay")),
        alpha_lr=_as_float("search.alpha_lr", g("search.alpha_lr")),
        alpha_betas=(
            _as_float("search.alpha_beta1", g("search.alpha_beta1")),
            _as_float("search.alpha_beta2", g("search.alpha_beta2")),
        ),
        alpha_weight_decay=_as_float("search.alpha_weight_decay", g("search.alpha_weight_decay")),
        noise=NoiseConfig(
            mu=_as_float("search.noise_mu", g("search.noise_mu")),
            sigma=sigma,
            enabled=_as_bool("search.noise_enabled", g("search.noise_enabled")),
        ),
        seed=seed,
        val_fraction=_as_float("search.val_fraction", g("search.val_fraction")),
        cutout_enabled=_as_bool("search.cutout_enabled", g("search.cutout_enabled")),
        cutout_length=_as_int("search.cutout_length", g("search.cutout_length")),
        grad_clip=_as_float("search.grad_clip", g("search.grad_clip")),
    )
    train = TrainConfig(
        epochs=_as_int("train.epochs", g("train.epochs")),
        batch_size=_as_int("train.batch_size", g("train.batch_size")),
        lr=_as_float("train.lr", g("train.lr")),
        momentum=_as_float("train.momentum", g("train.momentum")),
        weight_decay=_as_float("train.weight_decay", g("train.weight_decay")),
        label_smoothing=_as_float("train.label_smoothing", g("train.label_smoothing")),
        cutout_enabled=_as_bool("train.cutout_enabled", g("train.cutout_enabled")),
        cutout_length=_as_int("train.cutout_length", g("train.cutout_length")),
        seed=seed,
    )
    position = g("analyze.position")
    if position != "center":
        parts = position.split(",")
        if len(parts) != 2:
            raise ConfigError("analyze.position: expected 'center' or 'row,col'")
        _as_int("analyze.position", parts[0])
        _as_int("analyze.position", parts[1])
    return RunConfig(
        raw_text=text,
        seed=seed,
        dataset=dataset,
        test_dataset=test_dataset,
        backbone=backbone,
        attention=attention,
        search=search,
        train=train,
        sweep_mus=_as_float_list("sweep.mus", g("sweep.mus")),
        sweep_sigmas=_as_float_list("sweep.sigmas", g("sweep.sigmas")),
        sweep_seeds=_as_int_list("sweep.seeds", g("sweep.seeds")),
        sweep_workers=_as_int("sweep.workers", g("sweep.workers")),
        analyze_n_average=_as_int("analyze.n_average", g("analyze.n_average")),
        analyze_position=position,
    )


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return build_run_config(fh.read())


def default_config_text() -> str:
    lines = [f"{k} = {v}" for k, v in _DEFAULTS.items()]
    return "\n".join(lines) + "\n"
