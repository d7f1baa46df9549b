"""Desk-scale infrared tiny-ship detection pipeline."""

from .autodiff import Tensor
from .data import (CrrpConfig, NoiseSpec, Scene, TargetSpec, classic_augment,
                   crrp, normalize, stitch, synth_scenes, tile)
from .losses import LossConfig, focal_iou_loss, focal_loss, soft_iou
from .metrics import (DetectionReport, MatchResult, RocCurve, compute_report,
                      evaluate_masks, match_centroids, roc_sweep)
from .model import ModelConfig, TinyShipNet
from .optim import Adagrad, cosine_lr, xavier_init
from .postprocess import TargetRegion, adaptive_threshold, cluster8, threshold
from .train import dataset_iou, train

__all__ = [
    "Tensor", "Scene", "TargetSpec", "NoiseSpec", "CrrpConfig",
    "classic_augment", "crrp", "normalize", "synth_scenes", "tile", "stitch",
    "LossConfig", "focal_loss", "focal_iou_loss", "soft_iou",
    "DetectionReport", "MatchResult", "RocCurve", "compute_report",
    "evaluate_masks", "match_centroids", "roc_sweep",
    "ModelConfig", "TinyShipNet", "Adagrad", "cosine_lr", "xavier_init",
    "TargetRegion", "adaptive_threshold", "cluster8", "threshold",
    "dataset_iou", "train",
]

__version__ = "0.1.0"
