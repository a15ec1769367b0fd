"""Supervised multi-channel convolutional transform learning with a trading pipeline."""

from .errors import ConfigError, DivergenceError, FormatError, SdcfError, SingularTransformError
from .model import ArchConfig, FeatureVars, LayerSpec, SdcfModel, grad_joint, infer, joint_objective, predict
from .presets import BASELINE_PRESETS, PRESETS, preset_arch
from .trainer import OptimConfig, TrainReport, train, train_cnn_baseline

__all__ = [
    "ArchConfig",
    "BASELINE_PRESETS",
    "ConfigError",
    "DivergenceError",
    "FeatureVars",
    "FormatError",
    "LayerSpec",
    "OptimConfig",
    "PRESETS",
    "SdcfError",
    "SdcfModel",
    "SingularTransformError",
    "TrainReport",
    "grad_joint",
    "infer",
    "joint_objective",
    "predict",
    "preset_arch",
    "train",
    "train_cnn_baseline",
]

__version__ = "0.1.0"
