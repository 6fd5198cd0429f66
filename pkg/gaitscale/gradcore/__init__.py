from gaitscale.gradcore.layers import Dense
from gaitscale.gradcore.layers import Module
from gaitscale.gradcore.layers import mse_loss
from gaitscale.gradcore.optim import Adam
from gaitscale.gradcore.optim import OptimizerState
from gaitscale.gradcore.optim import adam_step
from gaitscale.gradcore.tensor import Parameter
from gaitscale.gradcore.tensor import ShapeMismatch
from gaitscale.gradcore.tensor import Tensor
from gaitscale.gradcore.tensor import gradient_check
from gaitscale.gradcore.train import NonFiniteLoss
from gaitscale.gradcore.train import TrainConfig
from gaitscale.gradcore.train import train_loop

__all__ = [
    "Adam",
    "Dense",
    "Module",
    "NonFiniteLoss",
    "OptimizerState",
    "Parameter",
    "ShapeMismatch",
    "Tensor",
    "TrainConfig",
    "adam_step",
    "gradient_check",
    "mse_loss",
    "train_loop",
]
