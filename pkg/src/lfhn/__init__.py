"""Multi-stream local-feature-hierarchy network built from scratch on numpy.

A root convolution + ReLU + max-pool + cross-channel response normalization
feeds parallel streams of 1x1 convolutions whose outputs are concatenated
along channels and classified with two fully connected layers. The package
also ships a synthetic pose/illumination corpus generator, an SGD training
loop with gradient checking, and a rank-1 per-pose evaluation harness.
"""

from .graph import LfhnConfig, NetworkGraph, build_lfhn, shape_trace
from .layers import ConvParams, LrnParams
from .train import TrainConfig, GradReport

__all__ = [
    "LfhnConfig",
    "NetworkGraph",
    "build_lfhn",
    "shape_trace",
    "ConvParams",
    "LrnParams",
    "TrainConfig",
    "GradReport",
]

__version__ = "0.1.0"
