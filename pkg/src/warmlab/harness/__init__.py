"""Deterministic training runs, metrics, checkpoints, and divergence detection."""

from .checkpoint import CheckpointError, TrainState, load_checkpoint, save_checkpoint
from .config import DataConfig, DetectorConfig, RunConfig, load_run_config, run_config_from_dict, run_config_to_dict
from .data import Dataset, batch_indices, gen_dataset
from .detect import CONVERGED, DIVERGED, INCONCLUSIVE, RunVerdict, detect_divergence
from .metrics import METRICS_HEADER, MetricsRow, MetricsWriter, perplexity, read_metrics_csv
from .train import TrainResult, train

__all__ = [
    "CheckpointError", "TrainState", "load_checkpoint", "save_checkpoint",
    "DataConfig", "DetectorConfig", "RunConfig", "load_run_config", "run_config_from_dict", "run_config_to_dict",
    "Dataset", "batch_indices", "gen_dataset",
    "CONVERGED", "DIVERGED", "INCONCLUSIVE", "RunVerdict", "detect_divergence",
    "METRICS_HEADER", "MetricsRow", "MetricsWriter", "perplexity", "read_metrics_csv",
    "TrainResult", "train",
]
