"""Dual-branch long-tail classifier head over fixed feature embeddings.

Tail-class training features are compensated toward similar head classes,
logits receive a closed-form variance adjustment, and a residual
multi-proxy classifier is trained on class-balanced batches alongside a
uniformly trained one.
"""

from .classifier import (
    DcrModel,
    MultiProxyClassifier,
    effective_weights,
    init_classifier,
    mp_logits,
    rbmc_logits,
    uniform_logits,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config, parse_config_text
from .data import (
    Batch,
    DcrfError,
    FeatureDataset,
    LongTailSpec,
    class_balanced_sampler,
    generate_longtail,
    load_features,
    read_features,
    uniform_sampler,
    write_features,
)
from .evaluation import DriftReport, EvalReport, drift_report, evaluate, predict
from .fcm import CompensatedSet, compensate
from .lcm import LogitBundle, compensate_logits, lcm_loss, mc_expected_loss
from .stats import ClassStats, build_class_stats
from .training import TrainReport, TrainingError, loss_and_grad, train

__version__ = "0.1.0"

__all__ = [
    "Batch", "CheckpointError", "ClassStats", "CompensatedSet", "DcrModel", "DcrfError", "DriftReport",
    "EvalReport", "FeatureDataset", "LogitBundle", "LongTailSpec", "MultiProxyClassifier", "TrainConfig",
    "TrainReport", "TrainingError", "build_class_stats", "class_balanced_sampler", "compensate",
    "compensate_logits", "drift_report", "effective_weights", "evaluate", "generate_longtail",
    "init_classifier", "lcm_loss", "load_checkpoint", "load_config", "load_features", "loss_and_grad",
    "mc_expected_loss", "mp_logits", "parse_config_text", "predict", "rbmc_logits", "read_features",
    "save_checkpoint", "train", "uniform_logits", "uniform_sampler", "write_features",
]
