"""Language-embedded Gaussian splat scenes.

Attaches language embeddings to splat scenes using view-consistent
masklet supervision, trains them by feature rasterization against an L1
objective, and answers open-vocabulary point-level queries with a
two-step retrieval.
"""

__version__ = "0.1.0"

from .codec import LatentCodec
from .masklets import MaskletExtractor
from .query import TwoStepQueryEngine
from .scene import CameraPose, Frame, FrameSequence, GaussianBundle, validate_scene
from .trainer import LanguageEmbeddingTrainer

__all__ = [
    "CameraPose",
    "Frame",
    "FrameSequence",
    "GaussianBundle",
    "LatentCodec",
    "LanguageEmbeddingTrainer",
    "MaskletExtractor",
    "TwoStepQueryEngine",
    "validate_scene",
]
