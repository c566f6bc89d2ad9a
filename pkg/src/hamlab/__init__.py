"""Haptic attention model laboratory: an analytic tactile-glance simulator and
a recurrent attention network trained to classify shapes by touch."""

from .model import HapticAttentionModel, ModelConfig
from .trainer import TrainConfig, lr_at, train
from .envs import DatasetEnv, SimEnv, make_env

__all__ = ["HapticAttentionModel", "ModelConfig", "TrainConfig", "lr_at", "train",
           "DatasetEnv", "SimEnv", "make_env"]
__version__ = "0.1.0"
