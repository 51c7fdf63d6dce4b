"""Recursive convolutional autoencoder anomaly detection on a small numpy autodiff core."""
from .config import ConfigError, PipelineConfig, preset

__version__ = "0.1.0"

__all__ = ["ConfigError", "PipelineConfig", "preset", "__version__"]
