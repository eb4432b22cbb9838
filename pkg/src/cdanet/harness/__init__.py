"""Experiment orchestration: configuration, data preparation, cross-validation
splits, training, evaluation, ablation runs, and the command-line interface."""

from .config import ExperimentConfig, OptimizerConfig
from .data import (
    TargetCache,
    list_cases,
    load_case,
    make_targets,
    split_folds,
    write_phantom_dataset,
)
from .training import TrainResult, load_checkpoint, seed_everything, train
from .evaluation import evaluate, predict_labels
from .ablation import run_ablation
