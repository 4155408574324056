"""Minimal differentiable-array substrate for the simulator's networks."""

from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import gradient_check
from .layers import (Activation, AvgPool2, Conv2d, GlobalAvgPool, Layer, Parameter, Resample,
                     Sequential, zero_grads)
from .ops import (activation, avg_pool2, conv2d, conv2d_backward, global_avg_pool, l1_loss,
                  resample, resample_backward)
from .optim import adam_step, step_lr
from .unet import EncoderDecoder

__all__ = [
    "Activation", "AvgPool2", "Conv2d", "EncoderDecoder", "GlobalAvgPool", "Layer", "Parameter",
    "Resample", "Sequential", "activation", "adam_step", "avg_pool2", "conv2d", "conv2d_backward",
    "decode_checkpoint", "encode_checkpoint", "global_avg_pool", "gradient_check", "l1_loss",
    "load_checkpoint", "resample", "resample_backward", "save_checkpoint", "step_lr", "zero_grads",
]
