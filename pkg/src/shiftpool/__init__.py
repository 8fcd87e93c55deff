"""Shift-robust pooling for CNN sound event tagging.

Ships a small float32 autograd engine, the pooling mechanisms (binomial and
trainable low-pass filtered subsampling, adaptive polyphase sampling), a
VGG-style network builder, a log-mel frontend, training and shift-robustness
evaluation protocols, plus sklearn-style estimator wrappers and a CLI.
"""

from .tensor import Tensor, conv2d, depthwise_conv2d, batch_norm, DimensionError
from .pooling import (
    FilterKernel,
    PolyphaseIndex,
    PoolingSpec,
    aps_subsample,
    binomial1d,
    binomial2d,
    binomial_kernel,
    dense_maxpool,
    lpf_subsample,
    naive_subsample,
    polyphase_components,
    pooling_layer,
    tlpf_materialize,
)

__all__ = [
    "Tensor",
    "conv2d",
    "depthwise_conv2d",
    "batch_norm",
    "DimensionError",
    "FilterKernel",
    "PolyphaseIndex",
    "PoolingSpec",
    "aps_subsample",
    "binomial1d",
    "binomial2d",
    "binomial_kernel",
    "dense_maxpool",
    "lpf_subsample",
    "naive_subsample",
    "polyphase_components",
    "pooling_layer",
    "tlpf_materialize",
]

__version__ = "0.1.0"
