"""
Dataset sintético, inferencia de extremo a extremo y evaluación.

Sólo se reexporta la capa de datos; inferencia, evaluación y artefactos se
importan desde sus módulos.
"""

from .dataset import DatasetManifest, Sample, SyntheticDataset, generate_dataset
from .scenes import KINDS, Scene, SceneSampler

__all__ = [
    "DatasetManifest",
    "Sample",
    "SyntheticDataset",
    "generate_dataset",
    "KINDS",
    "Scene",
    "SceneSampler",
]
