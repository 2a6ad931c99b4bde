"""Vision-language embeddings for explainable whole-slide-image analysis."""

__version__ = "0.1.0"

from . import alignment, clustering, encoders, explain, fusion, metrics, mil, pipeline, store  # noqa: F401
