"""Multimodal document page classification.

Component classifiers (a small CNN over the page image and a bag-of-words
MLP over its OCR text) each emit per-class probability vectors; a
depth-capped gradient-boosted tree ensemble fuses the concatenated vectors
into the final prediction.
"""

__version__ = "0.1.0"

from .core import (
    ClassScores,
    DatasetManifest,
    LabelSet,
    ManifestError,
    PageRecord,
    Split,
    argmax_class,
    filter_split,
    load_manifest,
    save_manifest,
)

__all__ = [
    "__version__",
    "ClassScores",
    "DatasetManifest",
    "LabelSet",
    "ManifestError",
    "PageRecord",
    "Split",
    "argmax_class",
    "filter_split",
    "load_manifest",
    "save_manifest",
]
