"""Desk-scale boundary-induced, scene-aggregated monocular depth prediction."""

from bsnet.core import DataError, DepthMap, DivergenceError, FeatureMap, GradientPair, RgbImage

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DepthMap",
    "DivergenceError",
    "FeatureMap",
    "GradientPair",
    "RgbImage",
    "__version__",
]
