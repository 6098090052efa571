"""Experiment harness: metrics, the one-shot baseline and the study runners."""

from .config import ExperimentConfig, FieldParams, ChannelParams, load_config, preset
from .metrics import TrialResult, baseline_oneshot, min_sensors_for_accuracy, sad
from .studies import run_study

__all__ = [
    "ExperimentConfig",
    "FieldParams",
    "ChannelParams",
    "TrialResult",
    "baseline_oneshot",
    "load_config",
    "min_sensors_for_accuracy",
    "preset",
    "run_study",
    "sad",
]
