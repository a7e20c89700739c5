"""View-consistent latent dynamics as an auxiliary task for a pixel-based DQN agent."""

from .losses import LossConfig, LossReport
from .mmdp_env import MDPSpec
from .networks import NetworkConfig, NetworkStack
from .trainer import TrainConfig, TrainResult, train

__all__ = ["LossConfig", "LossReport", "MDPSpec", "NetworkConfig", "NetworkStack", "TrainConfig", "TrainResult", "train"]
__version__ = "0.1.0"
