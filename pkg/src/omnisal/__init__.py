"""Spherical saliency toolkit: tangent-image geometry, factored attention,
ambisonic audio, gaze processing and saliency-weighted quality metrics."""

from . import audio, avfusion, gaze, kernels, metrics, net, optim, quality, sphere, tensor
from .avfusion import AvConfig, SalViT360AV, av_model_forward
from .net import NetConfig, SalViT360, model_forward
from .sphere import SphericalCoord, ViewportLayout, default_layout
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "audio", "avfusion", "gaze", "kernels", "metrics", "net", "optim", "quality", "sphere",
    "tensor", "AvConfig", "SalViT360AV", "av_model_forward", "NetConfig", "SalViT360",
    "model_forward", "SphericalCoord", "ViewportLayout", "default_layout", "Tensor",
]
