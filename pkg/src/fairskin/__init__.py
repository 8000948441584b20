"""Skin-tone fairness toolkit: colour conversion and tone transfer, adaptive
blending, a small numpy CNN, SNNL channel pruning, meta-learned attribute
weights, fairness metrics and saliency maps."""

__version__ = "0.1.0"

from .colorspace import LabImage, lab_to_srgb, srgb_to_lab
from .errors import FairskinError
from .skintone import FstType, ToneParams, classify_fst, compute_ita, transform_skin_tone

__all__ = [
    "FairskinError",
    "FstType",
    "LabImage",
    "ToneParams",
    "__version__",
    "classify_fst",
    "compute_ita",
    "lab_to_srgb",
    "srgb_to_lab",
    "transform_skin_tone",
]
