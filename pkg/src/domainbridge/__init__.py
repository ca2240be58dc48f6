"""domainbridge: adapt a frozen image classifier to foreign domains by
translating foreign images into the classifier's training domain, selecting
the translation checkpoint by Fréchet distance between embedding
distributions."""

from . import classifier, datakit, metrics, pipeline, selection, synthgen, ui2i
from .errors import DomainBridgeError
from .manifest import (
    CLASS_ORDER,
    DatasetManifest,
    ImageSample,
    RegimeLabel,
    Split,
    SplitSpec,
    load_manifest,
    save_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "CLASS_ORDER",
    "DatasetManifest",
    "DomainBridgeError",
    "ImageSample",
    "RegimeLabel",
    "Split",
    "SplitSpec",
    "classifier",
    "datakit",
    "load_manifest",
    "metrics",
    "pipeline",
    "save_manifest",
    "selection",
    "synthgen",
    "ui2i",
]
