"""Desk-scale training and evaluation harness around the fusion library."""

from .synthetic import SyntheticClipSpec, gen_clips, load_dataset
from .model import DetectionModel, FUSER_NAMES
from .train import train, TrainAbort
from .evaluate import evaluate

__all__ = [
    "SyntheticClipSpec",
    "gen_clips",
    "load_dataset",
    "DetectionModel",
    "FUSER_NAMES",
    "train",
    "TrainAbort",
    "evaluate",
]
