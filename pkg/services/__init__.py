"""Service modules: training, checkpoints, evaluation and gradient verification."""

from .checkpoint import Checkpoint, load_checkpoint, load_detector, save_checkpoint
from .evaluator import EvalConfig, Evaluator, MetricsReport, confusion_counts, evaluate, robustness_eval
from .trainer import (
    EpochLog,
    JsonlLogCallback,
    OptimizerState,
    TrainConfig,
    Trainer,
    TrainingCallback,
    TrainingReport,
    adam_step,
    fit,
    lr_at_epoch,
)
from .verification import GradCheckRow, GradientSuite, format_rows, run_gradcheck_suite

__all__ = [
    'TrainConfig',
    'OptimizerState',
    'adam_step',
    'lr_at_epoch',
    'EpochLog',
    'TrainingReport',
    'TrainingCallback',
    'JsonlLogCallback',
    'Trainer',
    'fit',
    'Checkpoint',
    'save_checkpoint',
    'load_checkpoint',
    'load_detector',
    'EvalConfig',
    'MetricsReport',
    'Evaluator',
    'confusion_counts',
    'evaluate',
    'robustness_eval',
    'GradCheckRow',
    'GradientSuite',
    'run_gradcheck_suite',
    'format_rows',
]
