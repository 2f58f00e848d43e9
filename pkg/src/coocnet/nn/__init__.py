"""Minimal NumPy convolutional network: layers, backprop, Adam, checkpoints."""

from .checkpoint import checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint
from .layers import Conv2d, GlobalAvgPool, Linear, MaxPool2d, ReLU, conv_output_size, cross_entropy, softmax
from .model import (
    Model,
    backward,
    flat_gradients,
    forward,
    loss_and_gradients,
    predict_proba,
    reference_layers,
    reference_model,
)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "Conv2d",
    "GlobalAvgPool",
    "Linear",
    "MaxPool2d",
    "Model",
    "ReLU",
    "adam_step",
    "backward",
    "conv_output_size",
    "cross_entropy",
    "flat_gradients",
    "forward",
    "checkpoint_bytes",
    "load_checkpoint",
    "model_from_bytes",
    "loss_and_gradients",
    "predict_proba",
    "reference_layers",
    "reference_model",
    "save_checkpoint",
    "softmax",
]
