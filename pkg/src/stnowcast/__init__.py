"""Spatiotemporal nowcasting with graph-embedded transformer autoencoders.

A graph convolutional encoder/decoder pairs with a transformer
encoder/decoder to nowcast node-feature windows; reconstruction errors on
the nowcast frame, scored with Mahalanobis distance against training-set
statistics, flag extreme events.
"""

from .data import FrameSeries, IngestSpec, build_area_graph, build_grid_graph, split, synthesize
from .detector import DetectionArtifacts, fit_detector, mahalanobis, predict, select_threshold
from .graph import (GraphSpec, laplacian, neighborhood_average,
                    propagation_matrix, sharpen, smooth)
from .metrics import ConfusionCounts, confusion, scores
from .models import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .tensor import Adam, Tensor
from .training import TrainReport, loss, make_windows, train

__all__ = [
    "Adam", "ConfusionCounts", "DetectionArtifacts", "FrameSeries",
    "GraphSpec", "IngestSpec", "ModelConfig", "Tensor", "TrainReport",
    "build_area_graph", "build_grid_graph", "build_model", "confusion",
    "fit_detector", "laplacian", "load_checkpoint", "loss", "mahalanobis",
    "make_windows", "neighborhood_average", "predict", "propagation_matrix",
    "save_checkpoint",
    "scores", "select_threshold", "sharpen", "smooth", "split", "synthesize",
    "train",
]

__version__ = "0.1.0"
