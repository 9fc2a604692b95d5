"""Percoll density-gradient classification with CNN and FFT feature fusion."""

__version__ = "0.1.0"

from .kernels import BACKEND
from .dataset import CLASSES
from .models import ModelConfig, build_model, grad_cam
from .spectral import fft, image_features, smooth_profile, spectral_features
from .training import HyperParams, cross_validate, train_model

__all__ = [
    "BACKEND", "CLASSES", "HyperParams", "ModelConfig", "build_model", "cross_validate",
    "fft", "grad_cam", "image_features", "smooth_profile", "spectral_features", "train_model",
]
