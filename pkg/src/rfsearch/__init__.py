"""Search, train, and analyze pooling-based receptive-field attention blocks."""

from .attention import (
    AttentionConfig,
    MixedEdgeParams,
    RFAttention,
    count_search_space,
    count_skip_connections,
    discretize,
)
from .backbone import Backbone, BackboneSpec
from .config import RunConfig, build_run_config, load_run_config
from .data import Dataset, DatasetSpec, cutout_augment, gen_synthetic, load_cifar10, load_dataset, split_dataset
from .genotype import Genotype, chain_genotype, edge_index, edge_pairs, uniform_genotype
from .gradcheck import check_gradient
from .ops import ALL_OPS, DISABLED_NOISE, NoiseConfig, OpKind
from .rf import (
    ERFMap,
    RFProfile,
    RFSupport,
    compute_erf,
    compute_erf_averaged,
    dag_forward_fn,
    dependency_support,
    erf_radius,
    theoretical_rf,
    verify_rf,
)
from .rng import stream
from .search import SearchConfig, SearchReport, noise_sweep, run_search, search_step
from .tensor import Tape, Tensor, backward
from .train import TrainConfig, TrainReport, evaluate, train_model

__version__ = "0.1.0"

__all__ = [
    "ALL_OPS",
    "AttentionConfig",
    "Backbone",
    "BackboneSpec",
    "DISABLED_NOISE",
    "Dataset",
    "DatasetSpec",
    "ERFMap",
    "Genotype",
    "MixedEdgeParams",
    "NoiseConfig",
    "OpKind",
    "RFAttention",
    "RFProfile",
    "RFSupport",
    "RunConfig",
    "SearchConfig",
    "SearchReport",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainReport",
    "backward",
    "build_run_config",
    "chain_genotype",
    "check_gradient",
    "compute_erf",
    "compute_erf_averaged",
    "count_search_space",
    "count_skip_connections",
    "cutout_augment",
    "dag_forward_fn",
    "dependency_support",
    "discretize",
    "edge_index",
    "edge_pairs",
    "erf_radius",
    "evaluate",
    "gen_synthetic",
    "load_cifar10",
    "load_dataset",
    "load_run_config",
    "noise_sweep",
    "run_search",
    "search_step",
    "split_dataset",
    "stream",
    "theoretical_rf",
    "train_model",
    "uniform_genotype",
    "verify_rf",
]
