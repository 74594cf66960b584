"""Texture/colour domain assimilation for grayscale image classifiers, with adversarial robustness evaluation."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
