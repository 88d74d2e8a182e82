"""Timestamp-driven global mapping plugin for time series forecasters."""

from ._glaff import (
    GlaffError,
    cli,
    config_text,
    gelu,
    gradcheck,
    median_lower,
    moment_denormalize,
    quantile,
    robust_denormalize,
    softmax,
    synth,
    timestamp_features,
    train,
)

__all__ = [
    "GlaffError",
    "cli",
    "config_text",
    "gelu",
    "gradcheck",
    "median_lower",
    "moment_denormalize",
    "quantile",
    "robust_denormalize",
    "softmax",
    "synth",
    "timestamp_features",
    "train",
]
