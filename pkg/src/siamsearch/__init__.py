"""Weakly supervised person-search objective on synthetic two-view data.

numpy only: a small shared MLP encoder with hand-written gradients, the
consistency and contrastive losses, first-neighbour pseudo labels, a momentum
memory bank and an IoU-gated mAP/CMC evaluation.
"""

from .clustering import cluster_epoch, first_neighbors, nmi, purity
from .encoder import EncoderParams, backward, forward, init_params
from .evaluation import average_precision, evaluate_search, iou
from .losses import (
    cluster_contrastive,
    instance_recognition_loss,
    inter_instance_similarity_consistency,
    self_instance_consistency,
    total_loss,
)
from .memory import MemoryBank
from .synth import SynthConfig, generate_world, split_query_gallery
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "EncoderParams",
    "MemoryBank",
    "SynthConfig",
    "TrainConfig",
    "average_precision",
    "backward",
    "cluster_contrastive",
    "cluster_epoch",
    "evaluate_search",
    "first_neighbors",
    "forward",
    "generate_world",
    "init_params",
    "instance_recognition_loss",
    "inter_instance_similarity_consistency",
    "iou",
    "nmi",
    "purity",
    "self_instance_consistency",
    "split_query_gallery",
    "total_loss",
    "train",
]
