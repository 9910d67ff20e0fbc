"""Sparse-to-dense depth completion by scale-prompting a frozen monocular depth model.

A toy ViT depth backbone is modulated by prompts built from sparse metric
depth; its relative output is mapped to meters with one global
least-squares scale and shift.
"""
__version__ = "0.1.0"

from .backbone import BackboneConfig, init_backbone, predict_relative
from .depth_domain import AlignmentFit, apply_fit, depth_to_disparity, lsq_align, normalize
from .errors import (ConfigError, DataError, EmptyInput, EmptyRow, EmptySparseInput, FitAborted,
                     FormatError, ScaleDegenerate, ShapeError)
from .evaluation import absrel, evaluate, rmse, scale_consistency
from .losses import LossWeights, loss_anchor, loss_gm, loss_rssim, loss_ssi, loss_total
from .maps import DepthMap, RelativeMap, RgbImage
from .sape import SapeConfig, baseline_forward, init_sape, prompted_forward
from .scene import PatternConfig, apply_pattern, gen_scene

__all__ = [
    "AlignmentFit", "BackboneConfig", "ConfigError", "DataError", "DepthMap", "EmptyInput", "EmptyRow",
    "EmptySparseInput", "FitAborted", "FormatError", "LossWeights", "PatternConfig", "RelativeMap",
    "RgbImage", "SapeConfig", "ScaleDegenerate", "ShapeError", "absrel", "apply_fit", "apply_pattern",
    "baseline_forward", "depth_to_disparity", "evaluate", "gen_scene", "init_backbone", "init_sape",
    "loss_anchor", "loss_gm", "loss_rssim", "loss_ssi", "loss_total", "lsq_align", "normalize",
    "predict_relative", "prompted_forward", "rmse", "scale_consistency",
]
