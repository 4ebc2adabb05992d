"""Occlusion-robust face embedding lab.

Synthetic occluded-face datasets, a small attention-equipped template
generator trained with balanced (non-occluded, occluded) pairs and a
similarity triplet objective, and the biometric measurement stack (CMC,
TAR@FAR, TPIR@FPIR, average degradation, McNemar) needed to quantify how
much occlusion costs an embedding and how much the training recovers.
"""

from .datagen import (
    OCCLUDER_KINDS,
    AttributeSplit,
    Dataset,
    ImageSample,
    SynthSpec,
    generate_dataset,
    split_by_attribute,
)
from .errors import ConfigError, DataError, DivergenceError, OreoError, ProtocolError
from .manifest import export_dataset, load_manifest
from .model import BackboneConfig, OreoModel, init_params, render_attention_raster
from .trainer import TrainConfig, embed_dataset, load_model, train

__all__ = [
    "OCCLUDER_KINDS",
    "AttributeSplit",
    "BackboneConfig",
    "ConfigError",
    "DataError",
    "Dataset",
    "DivergenceError",
    "ImageSample",
    "OreoError",
    "OreoModel",
    "ProtocolError",
    "SynthSpec",
    "TrainConfig",
    "embed_dataset",
    "export_dataset",
    "generate_dataset",
    "init_params",
    "load_manifest",
    "load_model",
    "render_attention_raster",
    "split_by_attribute",
    "train",
]
