"""Crop autoencoder: model, layers, optimizer, and training loop."""

from .layers import BatchNorm2d, Conv2d, ConvTranspose2d, ReLU, Sigmoid, mse_loss
from .model import (
    DEFAULT_BLOCKS,
    INPUT_CHANNELS,
    INPUT_SIZE,
    LATENT_DIM,
    MAGIC,
    CaeConfig,
    CaeModel,
    load_model,
    save_model,
)
from .optim import AdamaxState, adamax_step
from .training import TrainResult, loss_curve_to_csv, save_checkpoint, train

__all__ = [
    "AdamaxState",
    "BatchNorm2d",
    "CaeConfig",
    "CaeModel",
    "Conv2d",
    "ConvTranspose2d",
    "DEFAULT_BLOCKS",
    "INPUT_CHANNELS",
    "INPUT_SIZE",
    "LATENT_DIM",
    "MAGIC",
    "ReLU",
    "Sigmoid",
    "TrainResult",
    "adamax_step",
    "load_model",
    "loss_curve_to_csv",
    "mse_loss",
    "save_checkpoint",
    "save_model",
    "train",
]
