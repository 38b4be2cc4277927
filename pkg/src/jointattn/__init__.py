"""Interpretable skeleton-sequence classification with per-joint attention."""

from .dataset import PRESETS, Dataset, MotionSample, generate_synthetic, load_dataset, prepare
from .evaluation import FoldReport, RunReport, ablation_attention_loss, ablation_no_attention, loocv
from .model import ModelConfig, Network, forward, init_network
from .report import emit_reports, read_run_report
from .training import LossWeights, TrainConfig, class_weights, train

__all__ = [
    "PRESETS",
    "Dataset",
    "FoldReport",
    "LossWeights",
    "ModelConfig",
    "MotionSample",
    "Network",
    "RunReport",
    "TrainConfig",
    "ablation_attention_loss",
    "ablation_no_attention",
    "class_weights",
    "emit_reports",
    "forward",
    "generate_synthetic",
    "init_network",
    "load_dataset",
    "loocv",
    "prepare",
    "read_run_report",
    "train",
]
