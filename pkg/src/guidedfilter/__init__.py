"""Differentiable guided filtering for joint image upsampling.

The layer fits local linear models of a low-resolution result against a
guidance image and applies them at full resolution; gradients for all
inputs are derived by hand and checked against finite differences.  A
learnable guidance network and a small Adam training harness make the
whole pipeline end-to-end trainable at desk scale.
"""

from .guided import (
    DegenerateWindowError,
    GuidedFilterGrads,
    GuidedFilterParams,
    GuidedFilterTape,
    backward,
    forward_highres,
    forward_joint,
)
from .guidance import AdaptiveNorm, ConvLayer, FixedChannelMeanGuidance, GuidanceNet
from .training import (
    AdamState,
    GuidedUpsampler,
    TrainConfig,
    TrainingError,
    adam_step,
    build_model,
    make_dataset,
    mse_loss,
    train,
)

__all__ = [
    "AdamState",
    "AdaptiveNorm",
    "ConvLayer",
    "DegenerateWindowError",
    "FixedChannelMeanGuidance",
    "GuidanceNet",
    "GuidedFilterGrads",
    "GuidedFilterParams",
    "GuidedFilterTape",
    "GuidedUpsampler",
    "TrainConfig",
    "TrainingError",
    "adam_step",
    "backward",
    "build_model",
    "forward_highres",
    "forward_joint",
    "make_dataset",
    "mse_loss",
    "train",
]

__version__ = "0.1.0"
