# SPDX-License-Identifier: Apache-2.0
"""Fully-binarized networks with learned thermometer input encoding."""

from ._core import (
    ConfigError,
    DimensionError,
    DomainError,
    LoadError,
    Model,
    NumericError,
    RampADC,
    bin_conv2d,
    distributional_loss,
    encode_thermometer,
    glt_init,
    linear_ramp,
    model_size,
    popcount_linear,
    quantize_thresholds,
    surrogate_grad,
    synthetic_dataset,
    threshold_jacobian,
    thresholds_from_latent,
    xnor_dot,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "DomainError",
    "LoadError",
    "Model",
    "NumericError",
    "RampADC",
    "bin_conv2d",
    "distributional_loss",
    "encode_thermometer",
    "glt_init",
    "linear_ramp",
    "model_size",
    "popcount_linear",
    "quantize_thresholds",
    "surrogate_grad",
    "synthetic_dataset",
    "threshold_jacobian",
    "thresholds_from_latent",
    "xnor_dot",
]
