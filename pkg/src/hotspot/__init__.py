"""Event-centric crime hotspot prediction over flexible time intervals."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import CityGrid, CrimeDataset, build_grid, ingest_events, ingest_pois, make_dataset, region_embedding
from .errors import (CheckpointError, ConfigError, EmptyDatasetError, EmptyHistoryError, FormatError, HotspotError,
                     InvalidArgument, NumericalError, OutOfRange, TrainingDiverged)
from .evaluation import MetricReport, auc, evaluate_model, f1_metrics, hit_ratio_at_k
from .model import HotspotModel, ModelConfig
from .prediction import Predictor, Queries, predict
from .synth import Cluster, GeneratorSpec, generate
from .training import TrainingConfig, train_full

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "CityGrid", "Cluster", "ConfigError", "CrimeDataset", "EmptyDatasetError",
    "EmptyHistoryError", "FormatError", "GeneratorSpec", "HotspotError", "HotspotModel", "InvalidArgument",
    "MetricReport", "ModelConfig", "NumericalError", "OutOfRange", "Predictor", "Queries", "RunConfig",
    "TrainingConfig", "TrainingDiverged", "auc", "build_grid", "evaluate_model", "f1_metrics", "generate",
    "hit_ratio_at_k", "ingest_events", "ingest_pois", "load_checkpoint", "load_config", "make_dataset",
    "predict", "region_embedding", "save_checkpoint", "train_full",
]
