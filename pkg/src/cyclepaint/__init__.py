"""Jointly trained image completion and extrapolation networks tied by cycle losses."""

from .config import TrainingConfig
from .losses import LossReport, LossWeights
from .masking import Mask, MaskSpec, sample_mask
from .networks import DiscriminatorConfig, GeneratorConfig, ModelBundle, build_bundle

__version__ = "0.1.0"

__all__ = [
    "DiscriminatorConfig",
    "GeneratorConfig",
    "LossReport",
    "LossWeights",
    "Mask",
    "MaskSpec",
    "ModelBundle",
    "TrainingConfig",
    "build_bundle",
    "sample_mask",
]
