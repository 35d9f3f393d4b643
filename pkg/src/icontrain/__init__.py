"""Interactive CNN pixel-classifier training for boundary segmentation."""

from . import nn, sampling, segmetrics, synth, trainer  # noqa: F401

__version__ = "0.1.0"
