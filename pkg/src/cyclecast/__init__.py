"""Cycle-consistent adversarial nowcasting of gridded rain-rate fields."""

from .fields import (
    DEFAULT_CAP,
    GridMeta,
    NormalizedField,
    RainField,
    denormalize,
    normalize,
)
from .losses import LossWeights, TorrentialConfig
from .networks import DiscriminatorSpec, GeneratorSpec
from .storage import DatasetManifest, HsrPair, build_pairs, read_field, write_field
from .trainer import TrainConfig

__all__ = [
    "DEFAULT_CAP",
    "GridMeta",
    "NormalizedField",
    "RainField",
    "denormalize",
    "normalize",
    "LossWeights",
    "TorrentialConfig",
    "DiscriminatorSpec",
    "GeneratorSpec",
    "DatasetManifest",
    "HsrPair",
    "build_pairs",
    "read_field",
    "write_field",
    "TrainConfig",
]

__version__ = "0.1.0"
