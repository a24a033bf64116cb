"""
Dataset loading, splitting and augmentation.
"""

from .batch import ExampleBatch, DatasetSplits
from .datasets import load_dataset, SUPPORTED_DATASETS
from .augment import augment, AUGMENTATION_POLICIES

__all__ = [
    "ExampleBatch",
    "DatasetSplits",
    "load_dataset",
    "SUPPORTED_DATASETS",
    "augment",
    "AUGMENTATION_POLICIES",
]
