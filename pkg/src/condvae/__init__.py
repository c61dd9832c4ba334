"""Conditional VAE with a calibrated decoder variance and a normalizing-flow label prior."""
from .models import CvaeModel, ModelConfig, Setting, build_model

__all__ = ["CvaeModel", "ModelConfig", "Setting", "build_model"]
__version__ = "0.1.0"
